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

#include "fhvae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "fhvae/kernels.hpp"
#include "fhvae/util.hpp"

namespace fhvae {

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::from_kv(const KvMap& kv) {
  TrainConfig c;
  if (kv_get(kv, "preset", "") == "paper") {
    c.K = 2000;
    c.max_steps = 500000;
    c.patience_steps = 50000;
    c.eval_every = 5000;
    c.bs = 256;
    c.b_seg = 5000;
  }
  c.K = kv_get_u64(kv, "K", c.K);
  c.bs = kv_get_u64(kv, "bs", c.bs);
  c.b_seg = kv_get_u64(kv, "b_seg", c.b_seg);
  c.alpha = kv_get_f64(kv, "alpha", c.alpha);
  c.max_steps = kv_get_u64(kv, "max_steps", c.max_steps);
  c.patience_steps = kv_get_u64(kv, "patience", c.patience_steps);
  c.eval_every = kv_get_u64(kv, "eval_every", c.eval_every);
  c.seed = kv_get_u64(kv, "seed", c.seed);
  c.lr = kv_get_f64(kv, "lr", c.lr);
  c.beta1 = kv_get_f64(kv, "beta1", c.beta1);
  c.beta2 = kv_get_f64(kv, "beta2", c.beta2);
  c.epsilon = kv_get_f64(kv, "epsilon", c.epsilon);
  c.seg_shift = kv_get_u64(kv, "seg_shift", c.seg_shift);
  c.val_frac = kv_get_f64(kv, "val_frac", c.val_frac);
  c.early_stopping = kv_get_bool(kv, "early_stopping", c.early_stopping);
  c.validate();
  return c;
}

void TrainConfig::to_kv(KvMap& kv) const {
  kv["K"] = std::to_string(K);
  kv["bs"] = std::to_string(bs);
  kv["b_seg"] = std::to_string(b_seg);
  kv["alpha"] = fmt_f64(alpha);
  kv["max_steps"] = std::to_string(max_steps);
  kv["patience"] = std::to_string(patience_steps);
  kv["eval_every"] = std::to_string(eval_every);
  kv["seed"] = std::to_string(seed);
  kv["lr"] = fmt_f64(lr);
  kv["beta1"] = fmt_f64(beta1);
  kv["beta2"] = fmt_f64(beta2);
  kv["epsilon"] = fmt_f64(epsilon);
  kv["seg_shift"] = std::to_string(seg_shift);
  kv["val_frac"] = fmt_f64(val_frac);
  kv["early_stopping"] = early_stopping ? "true" : "false";
}

void TrainConfig::validate() const {
  if (K < 1 || bs < 1 || b_seg < 1)
    throw ConfigError("K, bs and b_seg must all be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("beta1 and beta2 must lie in (0, 1)");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (val_frac < 0.0 || val_frac >= 1.0)
    throw ConfigError("val_frac must lie in [0, 1)");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(epsilon) {}

void Adam::step(const std::vector<Tensor>& params) {
  // Validate every gradient first: a non-finite gradient aborts the step
  // before any parameter changes.
  for (const Tensor& p : params) {
    if (!p.has_grad())
      throw Error("Adam: parameter missing gradient (backward not run?)");
    for (double gv : p.grad())
      if (!std::isfinite(gv))
        throw NumericError(
            "Adam: non-finite gradient encountered; step aborted");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const Tensor& p : params) {
    Slot& slot = slots_[p.impl()];
    if (slot.m.empty()) {
      slot.m.assign(p.numel(), 0.0);
      slot.v.assign(p.numel(), 0.0);
    }
    Tensor& mp = const_cast<Tensor&>(p);
    kernels::active().adam_update(mp.data_mut().data(), slot.m.data(),
                                  slot.v.data(), p.grad().data(), p.numel(),
                                  lr_, b1_, b2_, eps_, bc1, bc2);
  }
}

void Adam::reset_moments(const Tensor& param) {
  auto it = slots_.find(param.impl());
  if (it == slots_.end()) return;
  std::fill(it->second.m.begin(), it->second.m.end(), 0.0);
  std::fill(it->second.v.begin(), it->second.v.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Sequence sampling
// ---------------------------------------------------------------------------

std::vector<size_t> sample_sequence_batch(size_t n_sequences, size_t k,
                                          Rng& rng) {
  if (n_sequences == 0)
    throw DataError("sample_sequence_batch: empty dataset");
  if (n_sequences >= k) return rng.sample_without_replacement(n_sequences, k);
  std::vector<size_t> out(k);
  for (auto& v : out) v = rng.uniform_below(n_sequences);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

Rng init_rng(uint64_t seed) { return Rng(seed, "init"); }

}  // namespace

Trainer::Trainer(const Dataset& train, const Dataset* validation,
                 const ModelConfig& mcfg, const TrainConfig& tcfg,
                 SamplingMode mode)
    : train_(train),
      val_(validation),
      mcfg_(mcfg),
      tcfg_(tcfg),
      mode_(mode),
      shift_(tcfg.seg_shift ? tcfg.seg_shift : mcfg.seg_len),
      params_([&] {
        Rng r = init_rng(tcfg.seed);
        return FhvaeParams::init(mcfg, r);
      }()),
      cache_(SVectorCache::create(
          mode == SamplingMode::kFlat ? train.size() : tcfg.K, mcfg.d_z2)),
      adam_(tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.epsilon),
      seq_rng_(tcfg.seed, "seq"),
      shuffle_rng_(tcfg.seed, "segshuffle"),
      eps_rng_(tcfg.seed, "eps") {
  tcfg_.validate();
  mcfg_.validate();
  if (train_.size() == 0) throw DataError("training set is empty");
  if (train_.dim != mcfg_.d_x)
    throw DataError("dataset dim " + std::to_string(train_.dim) +
                    " does not match model d_x " + std::to_string(mcfg_.d_x));
  if (tcfg_.early_stopping) {
    if (!val_ || val_->size() == 0)
      throw DataError(
          "early stopping requires a non-empty validation set");
  }
  if (build_segment_index(train_, mcfg_.seg_len, shift_).empty())
    throw DataError("no training sequence is long enough to segment");
}

std::vector<size_t> Trainer::next_sequence_batch() {
  return sample_sequence_batch(train_.size(), tcfg_.K, seq_rng_);
}

std::vector<double> Trainer::map_svector(size_t seq_index) const {
  auto refs = sequence_segment_refs(train_, seq_index, mcfg_.seg_len, shift_);
  if (refs.empty())
    throw DataError("sequence " + std::to_string(seq_index) +
                    " has zero segments");
  std::vector<Segment> segs;
  segs.reserve(refs.size());
  for (const SegRef& r : refs)
    segs.push_back(materialize(train_, r, mcfg_.seg_len));
  return infer_svector_map(params_, segs);
}

void Trainer::reset_cache(const std::vector<size_t>& seq_ids) {
  if (seq_ids.size() != cache_.entries())
    throw Error("reset_cache: need exactly K=" +
                std::to_string(cache_.entries()) + " sequences, got " +
                std::to_string(seq_ids.size()));
  for (size_t k = 0; k < seq_ids.size(); ++k) {
    const size_t seq = seq_ids[k];
    auto refs = sequence_segment_refs(train_, seq, mcfg_.seg_len, shift_);
    if (refs.empty())
      throw DataError("reset_cache: sequence " + std::to_string(seq) +
                      " has zero segments");
    cache_.assign(k, static_cast<int64_t>(seq),
                  static_cast<uint32_t>(refs.size()), map_svector(seq));
  }
  // Entries changed identity: their optimizer moments restart.
  adam_.reset_moments(cache_.table);
  cache_.table.zero_grad();

  // Canonical pool order (sequence index, segment index) regardless of the
  // sampling order; the shuffle stream then owns the batch order.
  pool_.clear();
  std::vector<size_t> sorted = seq_ids;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (size_t seq : sorted) {
    auto refs = sequence_segment_refs(train_, seq, mcfg_.seg_len, shift_);
    pool_.insert(pool_.end(), refs.begin(), refs.end());
  }
  pool_cursor_ = pool_.size();  // force a reshuffle before the next batch
}

LossBatch Trainer::make_batch(const std::vector<SegRef>& refs) const {
  LossBatch batch;
  batch.frames.batch = refs.size();
  batch.frames.frames.reserve(mcfg_.seg_len);
  const size_t d = mcfg_.d_x;
  // Sequence reads go through Dataset::seq() so audits see every access.
  std::vector<const SequenceRecord*> rows;
  rows.reserve(refs.size());
  for (const SegRef& r : refs) rows.push_back(&train_.seq(r.seq));
  for (size_t t = 0; t < mcfg_.seg_len; ++t) {
    Tensor ft = Tensor::zeros({refs.size(), d});
    double* out = ft.data_mut().data();
    for (size_t b = 0; b < refs.size(); ++b)
      std::memcpy(out + b * d,
                  rows[b]->feats.data() + (refs[b].frame_begin + t) * d,
                  d * sizeof(double));
    batch.frames.frames.push_back(ft);
  }
  for (const SegRef& r : refs)
    batch.seq_indices.push_back(static_cast<int64_t>(r.seq));
  return batch;
}

std::vector<Tensor> Trainer::all_params() {
  std::vector<Tensor> ps = params_.tensors();
  ps.push_back(cache_.table);
  return ps;
}

LossBreakdown Trainer::inner_step() {
  const auto t0 = std::chrono::steady_clock::now();
  if (pool_.empty()) throw Error("inner_step: cache was never reset");
  const size_t bs = std::min(tcfg_.bs, pool_.size());
  if (pool_cursor_ + bs > pool_.size()) {
    shuffle_rng_.shuffle(pool_);
    pool_cursor_ = 0;
  }
  std::vector<SegRef> refs(pool_.begin() + pool_cursor_,
                           pool_.begin() + pool_cursor_ + bs);
  pool_cursor_ += bs;

  LossBatch batch = make_batch(refs);
  params_.zero_grad();
  cache_.table.zero_grad();
  graph_.reset();
  LossBreakdown bd;
  Tensor loss =
      total_loss(graph_, params_, cache_, batch, tcfg_.alpha, eps_rng_, &bd);
  graph_.backward(loss);
  adam_.step(all_params());
  ++steps_;
  bd.wall_ms = std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0)
                   .count();
  return bd;
}

double Trainer::validation_bound() {
  if (!val_ || val_->size() == 0)
    throw DataError("validation_bound: empty validation set");
  Rng eval_rng(tcfg_.seed, "eval", eval_counter_++);
  Graph g;
  g.recording = false;
  double total = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < val_->size(); ++i) {
    auto refs = sequence_segment_refs(*val_, i, mcfg_.seg_len, shift_);
    if (refs.empty()) continue;
    std::vector<Segment> segs;
    segs.reserve(refs.size());
    for (const SegRef& r : refs) segs.push_back(materialize(*val_, r, mcfg_.seg_len));
    const std::vector<double> mu2 = infer_svector_map(params_, segs);
    const uint32_t n = static_cast<uint32_t>(segs.size());

    for (size_t begin = 0; begin < segs.size(); begin += tcfg_.bs) {
      const size_t end = std::min(begin + tcfg_.bs, segs.size());
      const size_t B = end - begin;
      std::vector<const Segment*> chunk;
      for (size_t s = begin; s < end; ++s) chunk.push_back(&segs[s]);
      FrameBatch fb = make_frame_batch(chunk, mcfg_);
      std::vector<double> mu2_rows(B * mcfg_.d_z2);
      for (size_t b = 0; b < B; ++b)
        std::copy(mu2.begin(), mu2.end(), mu2_rows.begin() + b * mcfg_.d_z2);
      Tensor mu2_t = Tensor::from_data({B, mcfg_.d_z2}, std::move(mu2_rows));
      Tensor eps2 = Tensor::zeros({B, mcfg_.d_z2});
      eval_rng.fill_normal(eps2.data_mut().data(), eps2.numel());
      Tensor eps1 = Tensor::zeros({B, mcfg_.d_z1});
      eval_rng.fill_normal(eps1.data_mut().data(), eps1.numel());
      BoundRows rows = segment_bound_rows(
          g, params_, fb, mu2_t, std::vector<uint32_t>(B, n), eps2, eps1);
      Tensor bound = rows.bound(g);
      total += kernels::active().sum(bound.data().data(), B);
      count += B;
      g.reset();
    }
  }
  if (count == 0)
    throw DataError("validation_bound: no validation segments");
  return total / static_cast<double>(count);
}

TrainResult Trainer::run() {
  TrainResult result{params_.clone()};
  result.peak_cache_bytes = cache_.bytes();

  double best = -std::numeric_limits<double>::infinity();
  size_t best_step = 0;
  bool stop = false;

  // Flat sampling: one slot per training sequence, MAP-initialized once.
  if (mode_ == SamplingMode::kFlat) {
    std::vector<size_t> all(train_.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    reset_cache(all);
  }

  auto maybe_eval = [&] {
    if (!tcfg_.early_stopping || steps_ % tcfg_.eval_every != 0) return;
    const double bound = validation_bound();
    if (bound > best) {
      best = bound;
      best_step = steps_;
      result.params = params_.clone();
    } else if (steps_ - best_step >= tcfg_.patience_steps) {
      stop = true;
      result.early_stopped = true;
    }
  };

  while (steps_ < tcfg_.max_steps && !stop) {
    if (mode_ == SamplingMode::kHierarchical) reset_cache(next_sequence_batch());
    const size_t inner =
        mode_ == SamplingMode::kHierarchical ? tcfg_.b_seg : tcfg_.max_steps;
    for (size_t b = 0; b < inner && steps_ < tcfg_.max_steps && !stop; ++b) {
      LossBreakdown bd = inner_step();
      result.log.push_back({steps_, bd});
      result.peak_cache_bytes =
          std::max(result.peak_cache_bytes, cache_.bytes());
      maybe_eval();
    }
  }

  result.steps_run = steps_;
  result.best_val_bound = best;
  result.best_step = best_step;
  if (!tcfg_.early_stopping || !std::isfinite(best))
    result.params = params_.clone();  // no eval happened: final weights
  return result;
}

TrainResult train_hierarchical(const Dataset& train, const Dataset* val,
                               const ModelConfig& mcfg,
                               const TrainConfig& tcfg) {
  Trainer t(train, val, mcfg, tcfg, SamplingMode::kHierarchical);
  return t.run();
}

TrainResult train_flat(const Dataset& train, const Dataset* val,
                       const ModelConfig& mcfg, const TrainConfig& tcfg) {
  Trainer t(train, val, mcfg, tcfg, SamplingMode::kFlat);
  return t.run();
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double val_frac,
                                          uint64_t seed) {
  const size_t n_val = static_cast<size_t>(
      std::floor(val_frac * static_cast<double>(data.size())));
  Rng rng(seed, "split");
  auto val_ids = rng.sample_without_replacement(data.size(), n_val);
  std::vector<bool> is_val(data.size(), false);
  for (size_t i : val_ids) is_val[i] = true;
  Dataset train, val;
  train.dim = val.dim = data.dim;
  train.standardized = val.standardized = data.standardized;
  for (size_t i = 0; i < data.size(); ++i)
    (is_val[i] ? val : train).seqs.push_back(data.seqs[i]);
  return {std::move(train), std::move(val)};
}

}  // namespace fhvae
