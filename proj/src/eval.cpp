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

#include "fhvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fhvae/kernels.hpp"
#include "fhvae/util.hpp"

namespace fhvae {

// ---------------------------------------------------------------------------
// Cosine and EER
// ---------------------------------------------------------------------------

double cosine_similarity(std::span<const double> a,
                         std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine: dimension mismatch");
  const auto& k = kernels::active();
  const double num = k.dot(a.data(), b.data(), a.size());
  const double na = std::sqrt(k.dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(k.dot(b.data(), b.data(), b.size()));
  if (na == 0.0 || nb == 0.0)
    throw DomainError("cosine: zero-norm embedding");
  return num / (na * nb);
}

double eer_from_scores(std::vector<double> positive,
                       std::vector<double> negative) {
  if (positive.empty() || negative.empty())
    throw DataError("eer: need at least one positive and one negative trial");
  for (double s : positive)
    if (!std::isfinite(s)) throw NumericError("eer: non-finite score");
  for (double s : negative)
    if (!std::isfinite(s)) throw NumericError("eer: non-finite score");
  std::sort(positive.begin(), positive.end());
  std::sort(negative.begin(), negative.end());
  const double p_n = static_cast<double>(positive.size());
  const double n_n = static_cast<double>(negative.size());

  // Candidate thresholds: every score, ascending. Accept iff score >= t.
  std::vector<double> thresholds;
  thresholds.reserve(positive.size() + negative.size());
  thresholds.insert(thresholds.end(), positive.begin(), positive.end());
  thresholds.insert(thresholds.end(), negative.begin(), negative.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  auto frr_at = [&](double t) {
    const auto it = std::lower_bound(positive.begin(), positive.end(), t);
    return static_cast<double>(it - positive.begin()) / p_n;
  };
  auto far_at = [&](double t) {
    const auto it = std::lower_bound(negative.begin(), negative.end(), t);
    return static_cast<double>(negative.end() - it) / n_n;
  };

  // Walk the operating points until the curves cross; FRR rises from 0 and
  // FAR falls from 1 as the threshold increases.
  double far1 = 1.0, frr1 = 0.0;
  for (double t : thresholds) {
    const double far2 = far_at(t), frr2 = frr_at(t);
    if (frr2 >= far2) {
      const double gap1 = far1 - frr1;  // > 0 before the crossing
      const double gap2 = frr2 - far2;  // >= 0 at/after the crossing
      if (gap1 + gap2 <= 0.0) return far2;  // curves touch exactly
      const double s = gap1 / (gap1 + gap2);
      return far1 + s * (far2 - far1);
    }
    far1 = far2;
    frr1 = frr2;
  }
  return 0.0;  // fully separable
}

double eer(const TrialSet& trials) {
  std::vector<double> pos, neg;
  for (const Trial& t : trials)
    (t.same_source ? pos : neg).push_back(t.score);
  return eer_from_scores(std::move(pos), std::move(neg));
}

// ---------------------------------------------------------------------------
// Trials from MAP s-vectors
// ---------------------------------------------------------------------------

TrialSet score_trials(const FhvaeParams& params, const Dataset& heldout,
                      const TrialSpec& spec) {
  const size_t shift = spec.seg_shift ? spec.seg_shift : params.cfg.seg_len;
  std::vector<std::vector<double>> svecs;
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  for (size_t i = 0; i < heldout.size(); ++i) {
    auto refs = sequence_segment_refs(heldout, i, params.cfg.seg_len, shift);
    if (refs.empty())
      throw DataError("score_trials: sequence " + heldout.seqs[i].seq_id +
                      " is too short to segment");
    std::vector<Segment> segs;
    segs.reserve(refs.size());
    for (const SegRef& r : refs)
      segs.push_back(materialize(heldout, r, params.cfg.seg_len));
    svecs.push_back(infer_svector_map(params, segs));
    ids.push_back(heldout.seqs[i].seq_id);
    auto it = heldout.seqs[i].labels.find(spec.label_key);
    if (it == heldout.seqs[i].labels.end())
      throw DataError("score_trials: sequence " + ids.back() +
                      " is missing label \"" + spec.label_key + "\"");
    labels.push_back(it->second);
  }

  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t i = 0; i < svecs.size(); ++i)
    for (size_t j = i + 1; j < svecs.size(); ++j) pairs.emplace_back(i, j);
  if (pairs.size() > spec.max_trials) {
    Rng rng(spec.seed, "trials");
    auto keep = rng.sample_without_replacement(pairs.size(), spec.max_trials);
    std::sort(keep.begin(), keep.end());
    std::vector<std::pair<size_t, size_t>> sub;
    sub.reserve(keep.size());
    for (size_t k : keep) sub.push_back(pairs[k]);
    pairs = std::move(sub);
  }

  TrialSet out;
  out.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    Trial t;
    t.id_a = ids[i];
    t.id_b = ids[j];
    t.same_source = labels[i] == labels[j];
    t.score = cosine_similarity(svecs[i], svecs[j]);
    out.push_back(std::move(t));
  }
  bool any_pos = false, any_neg = false;
  for (const Trial& t : out) (t.same_source ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw DataError("score_trials: degenerate trial set");
  return out;
}

// ---------------------------------------------------------------------------
// Embedding dump
// ---------------------------------------------------------------------------

EmbeddingDump embed_segments(const FhvaeParams& params, const Dataset& data,
                             size_t seg_shift, size_t max_segments) {
  const ModelConfig& cfg = params.cfg;
  const size_t shift = seg_shift ? seg_shift : cfg.seg_len;
  auto refs = build_segment_index(data, cfg.seg_len, shift);
  if (refs.empty()) throw DataError("embed_segments: no segments");
  if (max_segments && refs.size() > max_segments) refs.resize(max_segments);

  EmbeddingDump dump;
  dump.n = refs.size();
  dump.d_z1 = cfg.d_z1;
  dump.d_z2 = cfg.d_z2;
  dump.z1_bar.resize(dump.n * cfg.d_z1);
  dump.z2_bar.resize(dump.n * cfg.d_z2);

  Graph g;
  g.recording = false;
  constexpr size_t kChunk = 128;
  for (size_t begin = 0; begin < refs.size(); begin += kChunk) {
    const size_t end = std::min(begin + kChunk, refs.size());
    std::vector<Segment> segs;
    std::vector<const Segment*> ptrs;
    segs.reserve(end - begin);
    for (size_t i = begin; i < end; ++i)
      segs.push_back(materialize(data, refs[i], cfg.seg_len));
    for (const Segment& s : segs) ptrs.push_back(&s);
    FrameBatch fb = make_frame_batch(ptrs, cfg);
    GaussBatch q2 = encode_z2(g, params, fb);
    GaussBatch q1 = encode_z1(g, params, fb, q2.mean);
    std::copy(q2.mean.data().begin(), q2.mean.data().end(),
              dump.z2_bar.begin() + begin * cfg.d_z2);
    std::copy(q1.mean.data().begin(), q1.mean.data().end(),
              dump.z1_bar.begin() + begin * cfg.d_z1);
    for (size_t i = begin; i < end; ++i) {
      dump.seq_id.push_back(data.seqs[refs[i].seq].seq_id);
      dump.seg_index.push_back(refs[i].index);
      dump.dataset_seq.push_back(refs[i].seq);
    }
    g.reset();
  }
  return dump;
}

double centroid_split_accuracy(const std::vector<double>& emb, size_t n,
                               size_t d, const std::vector<size_t>& labels,
                               size_t n_classes) {
  if (labels.size() != n || n < 2)
    throw DataError("centroid accuracy: bad inputs");
  std::vector<double> centroid(n_classes * d, 0.0);
  std::vector<size_t> counts(n_classes, 0);
  for (size_t i = 0; i < n; i += 2) {  // even rows fit the centroids
    const size_t c = labels[i];
    if (c >= n_classes) throw DataError("centroid accuracy: label range");
    kernels::active().axpy(1.0, emb.data() + i * d,
                           centroid.data() + c * d, d);
    ++counts[c];
  }
  for (size_t c = 0; c < n_classes; ++c)
    if (counts[c])
      kernels::active().scale(centroid.data() + c * d,
                              1.0 / static_cast<double>(counts[c]),
                              centroid.data() + c * d, d);
  size_t hits = 0, total = 0;
  for (size_t i = 1; i < n; i += 2) {  // odd rows evaluate
    double best = std::numeric_limits<double>::infinity();
    size_t best_c = 0;
    for (size_t c = 0; c < n_classes; ++c) {
      if (!counts[c]) continue;
      const double dist = kernels::active().sqdist(
          emb.data() + i * d, centroid.data() + c * d, d);
      if (dist < best) {
        best = dist;
        best_c = c;
      }
    }
    hits += best_c == labels[i];
    ++total;
  }
  if (total == 0) throw DataError("centroid accuracy: empty eval half");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Recombination
// ---------------------------------------------------------------------------

Tensor recombine(const FhvaeParams& params, const Segment& xa,
                 const Segment& xb, Rng& rng) {
  const ModelConfig& cfg = params.cfg;
  Graph g;
  g.recording = false;
  auto draw = [&](size_t d) {
    Tensor eps = Tensor::zeros({d});
    rng.fill_normal(eps.data_mut().data(), d);
    return eps;
  };
  DiagGaussian q2a = encode_z2(g, params, xa);
  Tensor z2a = gauss::reparam_sample(g, q2a, draw(cfg.d_z2));
  DiagGaussian q1a = encode_z1(g, params, xa, z2a);
  Tensor z1a = gauss::reparam_sample(g, q1a, draw(cfg.d_z1));
  DiagGaussian q2b = encode_z2(g, params, xb);
  Tensor z2b = gauss::reparam_sample(g, q2b, draw(cfg.d_z2));

  auto frames = decode_x(g, params, z1a, z2b);
  Tensor out = Tensor::zeros({cfg.seg_len, cfg.d_x});
  for (size_t t = 0; t < frames.size(); ++t)
    std::copy(frames[t].mean.data().begin(), frames[t].mean.data().end(),
              out.data_mut().begin() + t * cfg.d_x);
  return out;
}

// ---------------------------------------------------------------------------
// Denominator scaling
// ---------------------------------------------------------------------------

DenomScalingResult denominator_scaling(size_t d,
                                       const std::vector<size_t>& m_list,
                                       size_t draws, uint64_t seed,
                                       double kernel_var) {
  if (m_list.empty() || d == 0 || draws == 0)
    throw ConfigError("denominator_scaling: empty inputs");
  for (size_t i = 1; i < m_list.size(); ++i)
    if (m_list[i] <= m_list[i - 1])
      throw ConfigError("denominator_scaling: M list must be ascending");
  if (!(kernel_var > 0.0))
    throw ConfigError("denominator_scaling: kernel variance must be > 0");

  DenomScalingResult out;
  out.m_list = m_list;
  out.samples.assign(m_list.size(), std::vector<double>(draws, 0.0));
  const double log_norm =
      -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * kernel_var);

  for (size_t mi = 0; mi < m_list.size(); ++mi) {
    const size_t m = m_list[mi];
    auto& bucket = out.samples[mi];
    parallel_for(draws, [&](size_t draw) {
      Rng rng(seed, "denom", mi * 1000003ULL + draw);
      std::vector<double> z = rng.normal_vec(d);
      std::vector<double> mu(d);
      // log sum exp over the M entries, streaming max-shift in two passes
      // is avoided by collecting the log densities first.
      std::vector<double> logp(m);
      for (size_t j = 0; j < m; ++j) {
        rng.fill_normal(mu.data(), d);
        logp[j] = log_norm - kernels::active().sqdist(z.data(), mu.data(), d) /
                                 (2.0 * kernel_var);
      }
      const double mx = kernels::active().vmax(logp.data(), m);
      double acc = 0.0;
      for (double lp : logp) acc += std::exp(lp - mx);
      bucket[draw] = mx + std::log(acc);
    });
    out.mean_log_denominator.push_back(
        kernels::active().sum(bucket.data(), draws) /
        static_cast<double>(draws));
  }

  // Least-squares slope of mean log-denominator against ln M.
  const size_t n = m_list.size();
  if (n >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
      const double x = std::log(static_cast<double>(m_list[i]));
      const double y = out.mean_log_denominator[i];
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    out.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step-time benchmark
// ---------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

double timed_median(const Dataset& data, const ModelConfig& mcfg,
                    TrainConfig tcfg, size_t warmup, size_t reps,
                    double* p10, double* p90) {
  Trainer t(data, nullptr, mcfg, tcfg, SamplingMode::kHierarchical);
  t.reset_cache(t.next_sequence_batch());
  for (size_t i = 0; i < warmup; ++i) t.inner_step();
  std::vector<double> ms;
  ms.reserve(reps);
  for (size_t i = 0; i < reps; ++i) ms.push_back(t.inner_step().wall_ms);
  if (p10) *p10 = percentile(ms, 0.10);
  if (p90) *p90 = percentile(ms, 0.90);
  return percentile(ms, 0.50);
}

}  // namespace

std::vector<BenchRow> bench_step_time(const Dataset& data,
                                      const ModelConfig& mcfg,
                                      const TrainConfig& base,
                                      const std::vector<size_t>& k_list,
                                      size_t warmup, size_t reps) {
  if (k_list.empty()) throw ConfigError("bench: empty K list");
  for (size_t k : k_list)
    if (k > data.size())
      throw DataError("bench: K=" + std::to_string(k) + " exceeds dataset (" +
                      std::to_string(data.size()) + " sequences)");
  std::vector<BenchRow> rows;
  for (size_t k : k_list) {
    TrainConfig tcfg = base;
    tcfg.K = k;
    tcfg.early_stopping = false;
    BenchRow row;
    row.K = k;
    row.median_ms =
        timed_median(data, mcfg, tcfg, warmup, reps, &row.p10_ms, &row.p90_ms);
    TrainConfig zero = tcfg;
    zero.alpha = 0.0;
    row.alpha_zero_median_ms =
        timed_median(data, mcfg, zero, warmup, reps, nullptr, nullptr);
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "K,median_ms,p10_ms,p90_ms,alpha_zero_median_ms\n";
  for (const BenchRow& r : rows)
    os << r.K << "," << fmt_f64_short(r.median_ms) << ","
       << fmt_f64_short(r.p10_ms) << "," << fmt_f64_short(r.p90_ms) << ","
       << fmt_f64_short(r.alpha_zero_median_ms) << "\n";
  return os.str();
}

}  // namespace fhvae
