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

#include <algorithm>
#include <cmath>
#include <set>

#include "fhvae/trainer.hpp"

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

SynthSpec tiny_synth(size_t m, size_t segs = 5, uint64_t seed = 11) {
  SynthSpec s;
  s.n_seqs = m;
  s.segs_per_seq = segs;
  s.d_z1 = 3;
  s.d_z2 = 3;
  s.d_x = 4;
  s.seg_len = 3;
  s.n_factors = std::min<size_t>(3, m);
  s.seed = seed;
  return s;
}

TrainConfig fast_config() {
  TrainConfig c;
  c.K = 4;
  c.bs = 8;
  c.b_seg = 5;
  c.max_steps = 20;
  c.early_stopping = false;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("sample_sequence_batch") {
  Rng rng(1);
  // M == K: an exhaustive draw, i.e. a permutation.
  auto batch = sample_sequence_batch(5, 5, rng);
  std::set<size_t> uniq(batch.begin(), batch.end());
  CHECK(uniq.size() == 5);

  // Deterministic under a fixed seed.
  Rng a(42), b(42);
  CHECK(sample_sequence_batch(100, 10, a) ==
        sample_sequence_batch(100, 10, b));

  // M < K falls back to replacement over all M.
  auto small = sample_sequence_batch(3, 7, rng);
  CHECK(small.size() == 7);
  for (size_t id : small) CHECK(id < 3);

  CHECK_THROWS_AS(sample_sequence_batch(0, 3, rng), DataError);
}

TEST_CASE("sequence sampling is uniform (Monte-Carlo, 3 sigma)") {
  const size_t M = 100, K = 10, draws = 10000;
  Rng rng(2024);
  std::vector<size_t> freq(M, 0);
  for (size_t d = 0; d < draws; ++d)
    for (size_t id : sample_sequence_batch(M, K, rng)) ++freq[id];
  // Inclusion count per id ~ Binomial(draws, K/M).
  const double p = static_cast<double>(K) / M;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  size_t outside = 0;
  for (size_t id = 0; id < M; ++id)
    if (std::fabs(static_cast<double>(freq[id]) - mean) > 3.0 * sigma)
      ++outside;
  // With 100 ids, ~0.27 are expected outside 3 sigma; allow a couple.
  CHECK(outside <= 2);
}

TEST_CASE("Adam closed-form steps") {
  SUBCASE("first step with unit gradient moves by about -lr") {
    Tensor p = Tensor::from_data({3}, {1.0, -0.5, 2.0}, true);
    std::fill(p.grad_mut().begin(), p.grad_mut().end(), 1.0);
    Adam opt(1e-3, 0.95, 0.999, 1e-8);
    opt.step({p});
    CHECK(p.data()[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(-0.5 - 1e-3).epsilon(1e-6));
  }

  SUBCASE("zero gradient leaves parameters untouched") {
    Tensor p = Tensor::from_data({2}, {0.7, -0.3}, true);
    p.zero_grad();
    Adam opt(1e-2, 0.9, 0.999, 1e-8);
    opt.step({p});
    CHECK(p.data()[0] == 0.7);
    CHECK(p.data()[1] == -0.3);
  }

  SUBCASE("matches a hand-rolled scalar reference over 5 steps") {
    const double lr = 7e-3, b1 = 0.95, b2 = 0.999, eps = 1e-8;
    const std::vector<double> grads = {0.4, -1.2, 0.05, 2.0, -0.6};
    Tensor p = Tensor::scalar(0.25, true);
    Adam opt(lr, b1, b2, eps);
    double ref = 0.25, m = 0.0, v = 0.0;
    for (size_t t = 0; t < grads.size(); ++t) {
      p.zero_grad();
      p.grad_mut()[0] = grads[t];
      opt.step({p});
      m = b1 * m + (1 - b1) * grads[t];
      v = b2 * v + (1 - b2) * grads[t] * grads[t];
      const double mhat = m / (1.0 - std::pow(b1, double(t + 1)));
      const double vhat = v / (1.0 - std::pow(b2, double(t + 1)));
      ref -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(p.data()[0] == doctest::Approx(ref).epsilon(1e-12));
    }
  }

  SUBCASE("non-finite gradient aborts the step without touching params") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    p.grad_mut()[0] = std::nan("");
    Adam opt(1e-3, 0.9, 0.999, 1e-8);
    CHECK_THROWS_AS(opt.step({p}), NumericError);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 2.0);
  }
}

TEST_CASE("reset_cache applies the MAP formula") {
  Dataset data = synth_generate(tiny_synth(4, /*segs=*/1)).data;
  ModelConfig mc = tiny_model();
  TrainConfig tc = fast_config();
  tc.K = 4;
  Trainer tr(data, nullptr, mc, tc, SamplingMode::kHierarchical);

  // Zero encoder: every slot becomes the zero vector.
  for (Tensor& t : tr.params().tensors())
    std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
  tr.reset_cache({0, 1, 2, 3});
  for (double v : tr.cache().table.data()) CHECK(v == 0.0);
  CHECK(tr.cache().seg_counts[0] == 1);

  // Single-segment sequence with g output v: slot = v / (1 + sigma^2).
  auto b = tr.params().z2_head.b.data_mut();
  for (size_t i = 0; i < mc.d_z2; ++i) b[i] = 0.8;  // mean head bias
  tr.reset_cache({0, 1, 2, 3});
  for (size_t k = 0; k < 4; ++k)
    for (size_t i = 0; i < mc.d_z2; ++i)
      CHECK(tr.cache().table.data()[k * mc.d_z2 + i] ==
            doctest::Approx(0.8 / 1.25).epsilon(1e-12));

  // After a reset, the forward loss is finite on all cached sequences.
  Rng prng(3);
  tr.params() = FhvaeParams::init(mc, prng);
  tr.reset_cache({0, 1, 2, 3});
  LossBreakdown bd = tr.inner_step();
  CHECK(std::isfinite(bd.total));
}

TEST_CASE("hierarchical and flat agree bit-for-bit under a shared setup") {
  Dataset data = synth_generate(tiny_synth(6, 5)).data;
  ModelConfig mc = tiny_model();
  TrainConfig tc;
  tc.K = 6;
  tc.bs = 8;
  tc.b_seg = 10;
  tc.max_steps = 10;
  tc.early_stopping = false;
  tc.seed = 77;

  Trainer hier(data, nullptr, mc, tc, SamplingMode::kHierarchical);
  Trainer flat(data, nullptr, mc, tc, SamplingMode::kFlat);

  // Identical cache initialization: both MAP over every sequence, slot
  // order = dataset order.
  std::vector<size_t> all = {0, 1, 2, 3, 4, 5};
  hier.reset_cache(all);
  flat.reset_cache(all);

  for (int step = 0; step < 10; ++step) {
    LossBreakdown a = hier.inner_step();
    LossBreakdown b = flat.inner_step();
    CHECK(a.total == b.total);
    CHECK(a.recon_ll == b.recon_ll);
    CHECK(a.kl_z1 == b.kl_z1);
    CHECK(a.kl_z2 == b.kl_z2);
    CHECK(a.log_prior_mu2 == b.log_prior_mu2);
    CHECK(a.disc_log_prob == b.disc_log_prob);
  }
}

TEST_CASE("cache memory is K-bound for hierarchical, M-bound for flat") {
  ModelConfig mc = tiny_model();
  TrainConfig tc = fast_config();
  tc.K = 10;
  tc.max_steps = 3;

  std::vector<size_t> hier_bytes;
  for (size_t m : {10u, 100u, 1000u}) {
    Dataset data = synth_generate(tiny_synth(m, 3)).data;
    TrainResult r =
        train_hierarchical(data, nullptr, mc, tc);
    hier_bytes.push_back(r.peak_cache_bytes);
  }
  CHECK(hier_bytes[0] == 10 * mc.d_z2 * 8);
  CHECK(hier_bytes[0] == hier_bytes[1]);
  CHECK(hier_bytes[1] == hier_bytes[2]);

  for (size_t m : {10u, 100u}) {
    Dataset data = synth_generate(tiny_synth(m, 3)).data;
    TrainResult r = train_flat(data, nullptr, mc, tc);
    CHECK(r.peak_cache_bytes == m * mc.d_z2 * 8);
  }
}

TEST_CASE("no step reads sequences outside the current K-batch") {
  Dataset data = synth_generate(tiny_synth(8, 4)).data;
  ModelConfig mc = tiny_model();
  TrainConfig tc = fast_config();
  tc.K = 3;
  Trainer tr(data, nullptr, mc, tc, SamplingMode::kHierarchical);

  std::vector<size_t> touched;
  data.access_observer = [&](size_t s) { touched.push_back(s); };

  for (int outer = 0; outer < 3; ++outer) {
    auto batch = tr.next_sequence_batch();
    std::set<size_t> allowed(batch.begin(), batch.end());
    tr.reset_cache(batch);
    for (size_t b = 0; b < tc.b_seg; ++b) {
      touched.clear();
      tr.inner_step();
      CHECK(!touched.empty());
      for (size_t s : touched) CHECK(allowed.count(s) == 1);
    }
  }
}

TEST_CASE("identical seeds reproduce identical logs") {
  Dataset data = synth_generate(tiny_synth(8, 4)).data;
  auto [train, val] = split_dataset(data, 0.25, 5);
  ModelConfig mc = tiny_model();
  TrainConfig tc = fast_config();
  tc.K = 3;
  tc.max_steps = 12;
  tc.early_stopping = true;
  tc.eval_every = 4;
  tc.patience_steps = 100;

  TrainResult a = train_hierarchical(train, &val, mc, tc);
  TrainResult b = train_hierarchical(train, &val, mc, tc);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].step == b.log[i].step);
    CHECK(a.log[i].bd.total == b.log[i].bd.total);
    CHECK(a.log[i].bd.disc_log_prob == b.log[i].bd.disc_log_prob);
  }
  CHECK(a.best_val_bound == b.best_val_bound);

  // And the resulting weights match bit-for-bit.
  auto na = a.params.named(), nb = b.params.named();
  for (size_t i = 0; i < na.size(); ++i) {
    auto da = na[i].second.data(), db = nb[i].second.data();
    CHECK(std::equal(da.begin(), da.end(), db.begin()));
  }
}

TEST_CASE("short training improves the validation bound") {
  Dataset data = synth_generate(tiny_synth(12, 8, /*seed=*/3)).data;
  auto [train, val] = split_dataset(data, 0.25, 9);
  ModelConfig mc = tiny_model();
  TrainConfig tc;
  tc.K = 4;
  tc.bs = 16;
  tc.b_seg = 10;
  tc.max_steps = 300;
  tc.eval_every = 50;
  tc.patience_steps = 300;
  tc.early_stopping = true;
  tc.seed = 1;

  Trainer probe(train, &val, mc, tc, SamplingMode::kHierarchical);
  const double before = probe.validation_bound();

  TrainResult r = train_hierarchical(train, &val, mc, tc);
  CHECK(r.best_val_bound > before);
  CHECK(r.steps_run <= tc.max_steps);

  // B_seg = 1 is a legal degenerate setup (cache re-estimated every step).
  TrainConfig tc1 = tc;
  tc1.b_seg = 1;
  tc1.max_steps = 3;
  tc1.early_stopping = false;
  TrainResult r1 = train_hierarchical(train, nullptr, mc, tc1);
  CHECK(r1.steps_run == 3);
}

TEST_CASE("configuration defaults and the full-scale preset") {
  TrainConfig c;
  CHECK(c.alpha == 10.0);
  CHECK(c.beta1 == 0.95);
  CHECK(c.beta2 == 0.999);
  CHECK(c.lr == 1e-3);
  CHECK(c.max_steps == 20000);
  CHECK(c.patience_steps == 2000);
  CHECK(c.eval_every == 500);

  KvMap kv;
  kv["preset"] = "paper";
  TrainConfig paper = TrainConfig::from_kv(kv);
  CHECK(paper.K == 2000);
  CHECK(paper.max_steps == 500000);
  CHECK(paper.patience_steps == 50000);
  ModelConfig pm = ModelConfig::from_kv(kv);
  CHECK(pm.layers == 2);
  CHECK(pm.hidden == 256);
  CHECK(pm.d_z1 == 32);
  CHECK(pm.d_x == 80);

  CHECK_THROWS_AS(
      [] {
        KvMap bad;
        bad["beta1"] = "1.5";
        return TrainConfig::from_kv(bad);
      }(),
      ConfigError);
}

TEST_CASE("flat training with a single sequence has zero discriminative "
          "term") {
  Dataset data = synth_generate(tiny_synth(1, 8)).data;
  ModelConfig mc = tiny_model();
  TrainConfig tc = fast_config();
  tc.K = 1;
  tc.max_steps = 5;
  TrainResult r = train_flat(data, nullptr, mc, tc);
  REQUIRE(r.log.size() == 5);
  for (const LogRow& row : r.log) CHECK(row.bd.disc_log_prob == 0.0);
}

TEST_CASE("trainer guards") {
  Dataset data = synth_generate(tiny_synth(4, 3)).data;
  ModelConfig mc = tiny_model();
  TrainConfig tc = fast_config();
  tc.early_stopping = true;  // but no validation set supplied
  CHECK_THROWS_AS(
      Trainer(data, nullptr, mc, tc, SamplingMode::kHierarchical), DataError);

  Dataset empty;
  empty.dim = mc.d_x;
  TrainConfig tc2 = fast_config();
  CHECK_THROWS_AS(
      Trainer(empty, nullptr, mc, tc2, SamplingMode::kHierarchical),
      DataError);

  // split_dataset is deterministic and partitions the data.
  auto [tr1, va1] = split_dataset(data, 0.5, 7);
  auto [tr2, va2] = split_dataset(data, 0.5, 7);
  CHECK(tr1.size() == tr2.size());
  CHECK(va1.size() == 2);
  CHECK(tr1.size() + va1.size() == data.size());
  CHECK(tr1.seqs[0].seq_id == tr2.seqs[0].seq_id);
}
