/* Copyright 2026 The fhvae Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fhvae/eval.hpp"

using namespace fhvae;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.d_z1 = 4;
  c.d_z2 = 4;
  c.d_x = 4;
  c.seg_len = 3;
  return c;
}

// Exhaustive-threshold reference: evaluate FAR/FRR on a dense threshold
// ladder and report the crossing, interpolating linearly on the bracketing
// segment. Independent of the production sweep.
double eer_oracle(const std::vector<double>& pos,
                  const std::vector<double>& neg) {
  std::vector<double> ts = pos;
  ts.insert(ts.end(), neg.begin(), neg.end());
  std::sort(ts.begin(), ts.end());
  auto rates = [&](double t) {
    size_t fr = 0, fa = 0;
    for (double s : pos) fr += s < t;
    for (double s : neg) fa += s >= t;
    return std::pair<double, double>{double(fa) / neg.size(),
                                     double(fr) / pos.size()};
  };
  double far1 = 1.0, frr1 = 0.0;
  for (double t : ts) {
    auto [far2, frr2] = rates(t);
    if (frr2 >= far2) {
      const double g1 = far1 - frr1, g2 = frr2 - far2;
      if (g1 + g2 <= 0.0) return far2;
      const double s = g1 / (g1 + g2);
      return far1 + s * (far2 - far1);
    }
    far1 = far2;
    frr1 = frr2;
  }
  return 0.0;
}

}  // namespace

TEST_CASE("eer unit cases") {
  // Separable.
  CHECK(eer_from_scores({0.9, 0.8}, {0.1, 0.2}) == 0.0);
  // Identical score multisets.
  CHECK(eer_from_scores({0.3, 0.6}, {0.3, 0.6}) == 0.5);
  // Interleaved: exhaustive enumeration says 0.5.
  CHECK(eer_oracle({0.9, 0.2}, {0.8, 0.1}) == 0.5);
  CHECK(eer_from_scores({0.9, 0.2}, {0.8, 0.1}) == 0.5);

  CHECK_THROWS_AS(eer_from_scores({}, {0.1}), DataError);
  CHECK_THROWS_AS(eer_from_scores({0.1}, {}), DataError);
}

TEST_CASE("eer matches the exhaustive oracle on random trials") {
  Rng rng(8);
  for (int t = 0; t < 40; ++t) {
    std::vector<double> pos, neg;
    const size_t np = 1 + rng.uniform_below(20);
    const size_t nn = 1 + rng.uniform_below(20);
    for (size_t i = 0; i < np; ++i) pos.push_back(rng.normal() + 0.5);
    for (size_t i = 0; i < nn; ++i) neg.push_back(rng.normal() - 0.5);
    CHECK(eer_from_scores(pos, neg) ==
          doctest::Approx(eer_oracle(pos, neg)).epsilon(1e-12));
  }
}

TEST_CASE("eer is invariant under strictly monotone score transforms") {
  Rng rng(9);
  std::vector<double> pos, neg;
  for (int i = 0; i < 15; ++i) pos.push_back(rng.normal() + 0.4);
  for (int i = 0; i < 22; ++i) neg.push_back(rng.normal() - 0.4);
  const double base = eer_from_scores(pos, neg);
  auto transform = [](std::vector<double> v, auto f) {
    for (double& x : v) x = f(x);
    return v;
  };
  auto aff = [](double x) { return 3.0 * x + 7.0; };
  auto expf_ = [](double x) { return std::exp(x); };
  CHECK(eer_from_scores(transform(pos, aff), transform(neg, aff)) ==
        doctest::Approx(base).epsilon(1e-12));
  CHECK(eer_from_scores(transform(pos, expf_), transform(neg, expf_)) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("cosine cases") {
  std::vector<double> a = {1.0, 2.0, -1.0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> na = {-1.0, -2.0, 1.0};
  CHECK(cosine_similarity(a, na) == doctest::Approx(-1.0).epsilon(1e-12));
  std::vector<double> zero = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(cosine_similarity(a, zero), DomainError);
}

TEST_CASE("score_trials: identical sequences score 1, ordering irrelevant") {
  ModelConfig mc = tiny_model();
  Rng prng(3);
  FhvaeParams p = FhvaeParams::init(mc, prng);

  SynthSpec spec;
  spec.n_seqs = 6;
  spec.segs_per_seq = 4;
  spec.d_x = 4;
  spec.seg_len = 3;
  spec.n_factors = 2;
  spec.seed = 21;
  Dataset data = synth_generate(spec).data;
  // Clone sequence 0 so one trial compares identical feature sequences.
  data.seqs[1] = data.seqs[0];
  data.seqs[1].seq_id = "clone";
  data.seqs[1].labels = data.seqs[0].labels;

  TrialSpec ts;
  TrialSet trials = score_trials(p, data, ts);
  bool found = false;
  for (const Trial& t : trials)
    if ((t.id_a == data.seqs[0].seq_id && t.id_b == "clone")) {
      CHECK(t.score == doctest::Approx(1.0).epsilon(1e-12));
      found = true;
    }
  CHECK(found);

  // A too-short sequence is an error.
  data.seqs[2].n_frames = 2;
  data.seqs[2].feats.resize(2 * data.dim);
  CHECK_THROWS_AS(score_trials(p, data, ts), DataError);
}

TEST_CASE("tsne: uniform distances give uniform conditionals") {
  // Four points with (nearly) equal pairwise distances: conditional
  // probabilities must approach 1/(n-1) each.
  const size_t n = 4;
  std::vector<double> row = {0.0, 2.0, 2.0, 2.0};
  double perp = 0.0;
  auto probs = tsne_conditional_row(row, 0, 2.9, &perp);
  for (size_t j = 1; j < n; ++j)
    CHECK(probs[j] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  // Uniform conditionals pin the perplexity at n - 1 for every bandwidth.
  CHECK(perp == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("tsne keeps well-separated clusters separate") {
  Rng rng(17);
  const size_t per = 60, n = 2 * per, d = 32;
  std::vector<double> pts(n * d);
  for (size_t i = 0; i < n; ++i) {
    const double center = i < per ? 4.0 : -4.0;
    for (size_t k = 0; k < d; ++k)
      pts[i * d + k] = (k == 0 ? center : 0.0) + 0.5 * rng.normal();
  }
  TsneConfig cfg;
  cfg.perplexity = 20.0;
  cfg.iterations = 400;
  cfg.seed = 5;
  TsneResult res = tsne_embed(pts, n, d, cfg);
  CHECK(res.final_kl < res.initial_kl);

  // Nearest neighbor in 2-D shares the cluster for >= 90% of points.
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    size_t best_j = 0;
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d0 = res.coords[i * 2] - res.coords[j * 2];
      const double d1 = res.coords[i * 2 + 1] - res.coords[j * 2 + 1];
      const double dist = d0 * d0 + d1 * d1;
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    hits += (i < per) == (best_j < per);
  }
  CHECK(static_cast<double>(hits) / n >= 0.9);

  // Determinism under a fixed seed.
  TsneResult res2 = tsne_embed(pts, n, d, cfg);
  CHECK(res.coords == res2.coords);

  CHECK_THROWS_AS(tsne_embed(pts, n, d, TsneConfig{.perplexity = 100.0}),
                  ConfigError);
}

TEST_CASE("tsne descends on random data and tolerates duplicates") {
  Rng rng(31);
  const size_t n = 40, d = 5;
  std::vector<double> pts(n * d);
  for (auto& v : pts) v = rng.normal();
  // Make two exact duplicates.
  for (size_t k = 0; k < d; ++k) pts[1 * d + k] = pts[0 * d + k];
  TsneConfig cfg;
  cfg.perplexity = 5.0;
  cfg.iterations = 250;
  cfg.exaggeration_iters = 80;
  TsneResult res = tsne_embed(pts, n, d, cfg);
  CHECK(res.final_kl < res.initial_kl);
  CHECK(std::isfinite(res.final_kl));
}

TEST_CASE("recombine: zero decoder yields zero frames; self reconstructs") {
  ModelConfig mc = tiny_model();
  Rng prng(11);
  FhvaeParams p = FhvaeParams::init(mc, prng);

  SynthSpec spec;
  spec.n_seqs = 2;
  spec.segs_per_seq = 3;
  spec.d_x = 4;
  spec.seg_len = 3;
  spec.n_factors = 2;
  spec.seed = 5;
  Dataset data = synth_generate(spec).data;
  Segment xa = segment_sequence(data.seqs[0], mc.seg_len, mc.seg_len)[0];
  Segment xb = segment_sequence(data.seqs[1], mc.seg_len, mc.seg_len)[0];

  // Zero decoder weights: mean frames are exactly zero.
  FhvaeParams pz = p.clone();
  for (auto* stack : {&pz.dec_pre})
    for (auto& l : *stack) {
      std::fill(l.w_x.data_mut().begin(), l.w_x.data_mut().end(), 0.0);
      std::fill(l.w_h.data_mut().begin(), l.w_h.data_mut().end(), 0.0);
      std::fill(l.b.data_mut().begin(), l.b.data_mut().end(), 0.0);
    }
  std::fill(pz.x_head.w.data_mut().begin(), pz.x_head.w.data_mut().end(),
            0.0);
  std::fill(pz.x_head.b.data_mut().begin(), pz.x_head.b.data_mut().end(),
            0.0);
  Rng r1(2);
  Tensor zeroed = recombine(pz, xa, xb, r1);
  CHECK(zeroed.dim(0) == mc.seg_len);
  CHECK(zeroed.dim(1) == mc.d_x);
  for (double v : zeroed.data()) CHECK(v == 0.0);

  // xa == xb: finite mean output of the right shape (reconstruction path).
  Rng r2(3);
  Tensor same = recombine(p, xa, xa, r2);
  for (double v : same.data()) CHECK(std::isfinite(v));
}

TEST_CASE("denominator scaling slope sits near 1 in the LLN regime") {
  // Reduced-size version of the acceptance experiment.
  auto res = denominator_scaling(32, {100, 1000}, 300, 7);
  const double gap = res.mean_log_denominator[1] - res.mean_log_denominator[0];
  CHECK(gap > 0.7 * std::log(10.0));
  CHECK(gap < 1.3 * std::log(10.0));

  // M = 1: mean equals the mean single log-density (one-term sum).
  auto single = denominator_scaling(8, {1}, 500, 3);
  Rng check_rng(0);
  // Direct average of log N(z; mu, 2 I) over fresh iid draws.
  double acc = 0.0;
  const size_t draws = 20000;
  for (size_t i = 0; i < draws; ++i) {
    double sq = 0.0;
    for (size_t k = 0; k < 8; ++k) {
      const double diff = check_rng.normal() - check_rng.normal();
      sq += diff * diff;
    }
    acc += -0.5 * 8 * std::log(2.0 * M_PI * 2.0) - sq / 4.0;
  }
  acc /= draws;
  CHECK(single.mean_log_denominator[0] ==
        doctest::Approx(acc).epsilon(0.02));

  CHECK_THROWS_AS(denominator_scaling(8, {100, 10}, 10, 0), ConfigError);
}

TEST_CASE("embedding dump and split-half centroid accuracy") {
  ModelConfig mc = tiny_model();
  Rng prng(13);
  FhvaeParams p = FhvaeParams::init(mc, prng);
  SynthSpec spec;
  spec.n_seqs = 8;
  spec.segs_per_seq = 4;
  spec.d_x = 4;
  spec.seg_len = 3;
  spec.n_factors = 2;
  spec.seed = 2;
  SynthDataset sd = synth_generate(spec);
  EmbeddingDump dump = embed_segments(p, sd.data);
  CHECK(dump.n == 8 * 4);
  CHECK(dump.z2_bar.size() == dump.n * mc.d_z2);
  CHECK(dump.seq_id[0] == sd.data.seqs[0].seq_id);

  // Labels perfectly aligned with embeddings give accuracy 1 when the
  // embedding IS the label structure.
  std::vector<size_t> labels(dump.n);
  std::vector<double> fake(dump.n * 2);
  for (size_t i = 0; i < dump.n; ++i) {
    labels[i] = (i / 2) % 2;  // both classes appear in both split halves
    fake[i * 2] = labels[i] ? 5.0 : -5.0;
    fake[i * 2 + 1] = 0.1 * (double(i % 7) - 3.0);
  }
  CHECK(centroid_split_accuracy(fake, dump.n, 2, labels, 2) == 1.0);
}

TEST_CASE("bench rows come back for every K with plausible timings") {
  ModelConfig mc = tiny_model();
  SynthSpec spec;
  spec.n_seqs = 30;
  spec.segs_per_seq = 3;
  spec.d_x = 4;
  spec.seg_len = 3;
  spec.seed = 6;
  Dataset data = synth_generate(spec).data;
  TrainConfig tc;
  tc.bs = 8;
  tc.early_stopping = false;
  tc.seed = 1;
  auto rows = bench_step_time(data, mc, tc, {2, 10}, 1, 5);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.median_ms > 0.0);
    CHECK(r.p10_ms <= r.median_ms);
    CHECK(r.median_ms <= r.p90_ms);
    CHECK(r.alpha_zero_median_ms > 0.0);
  }
  const std::string csv = bench_csv(rows);
  CHECK(csv.find("K,median_ms") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  CHECK_THROWS_AS(bench_step_time(data, mc, tc, {500}, 0, 1), DataError);
}
