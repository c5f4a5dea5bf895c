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
#pragma once

#include <limits>
#include <optional>

#include "fhvae/data.hpp"
#include "fhvae/objective.hpp"

namespace fhvae {

struct TrainConfig {
  size_t K = 8;        // sequence batch size
  size_t bs = 32;      // segment batch size
  size_t b_seg = 20;   // segment batches per sequence batch
  double alpha = 10.0;
  size_t max_steps = 20000;
  size_t patience_steps = 2000;
  size_t eval_every = 500;
  uint64_t seed = 0;
  double lr = 1e-3;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  size_t seg_shift = 0;  // 0 = non-overlapping (shift == seg_len)
  double val_frac = 0.1;
  bool early_stopping = true;

  static TrainConfig from_kv(const KvMap& kv);
  void to_kv(KvMap& kv) const;
  void validate() const;
};

// Bias-corrected adaptive-moment optimizer over the model weights and the
// cache table. Moments are keyed per tensor; one global step counter drives
// the bias correction. step() validates every gradient before touching any
// parameter, so a non-finite gradient aborts the whole step.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double epsilon);

  void step(const std::vector<Tensor>& params);
  void reset_moments(const Tensor& param);
  uint64_t step_count() const { return t_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  double lr_, b1_, b2_, eps_;
  uint64_t t_ = 0;
  std::unordered_map<const detail::TensorImpl*, Slot> slots_;
};

// Uniform draw of K sequence ids: without replacement when M >= K, with
// replacement otherwise. Error on an empty dataset.
std::vector<size_t> sample_sequence_batch(size_t n_sequences, size_t k,
                                          Rng& rng);

struct LogRow {
  size_t step = 0;
  LossBreakdown bd;
};

struct TrainResult {
  FhvaeParams params;  // best-validation weights (final weights otherwise)
  std::vector<LogRow> log;
  double best_val_bound = -std::numeric_limits<double>::infinity();
  size_t best_step = 0;
  size_t steps_run = 0;
  size_t peak_cache_bytes = 0;
  bool early_stopped = false;
};

enum class SamplingMode { kHierarchical, kFlat };

// Training driver. run() is the full loop; the granular methods exist so
// tests and the step-time benchmark can drive the algorithm piecewise.
class Trainer {
 public:
  Trainer(const Dataset& train, const Dataset* validation,
          const ModelConfig& mcfg, const TrainConfig& tcfg, SamplingMode mode);

  // Draws the next K-sequence batch from the training stream.
  std::vector<size_t> next_sequence_batch();

  // MAP-resets the cache over the given sequences (one slot each), zeroes
  // the cache's optimizer moments and rebuilds the segment pool.
  void reset_cache(const std::vector<size_t>& seq_ids);

  // One optimization step: sample a segment batch, build the loss, back-
  // propagate, update. Returns the loss breakdown with wall time filled in.
  LossBreakdown inner_step();

  // Mean segmental bound (no discriminative term) over the validation set,
  // with MAP mu2 per held-out sequence. Uses its own eval RNG stream.
  double validation_bound();

  TrainResult run();

  FhvaeParams& params() { return params_; }
  const FhvaeParams& params() const { return params_; }
  SVectorCache& cache() { return cache_; }
  const std::vector<SegRef>& pool() const { return pool_; }
  size_t steps_run() const { return steps_; }

 private:
  std::vector<double> map_svector(size_t seq_index) const;
  LossBatch make_batch(const std::vector<SegRef>& refs) const;
  std::vector<Tensor> all_params();

  const Dataset& train_;
  const Dataset* val_;
  ModelConfig mcfg_;
  TrainConfig tcfg_;
  SamplingMode mode_;
  size_t shift_;

  FhvaeParams params_;
  SVectorCache cache_;
  Adam adam_;
  Rng seq_rng_, shuffle_rng_, eps_rng_;
  size_t eval_counter_ = 0;

  std::vector<SegRef> pool_;
  size_t pool_cursor_ = 0;
  size_t steps_ = 0;
  Graph graph_;
};

// Convenience entry points used by the CLI.
TrainResult train_hierarchical(const Dataset& train, const Dataset* val,
                               const ModelConfig& mcfg,
                               const TrainConfig& tcfg);
TrainResult train_flat(const Dataset& train, const Dataset* val,
                       const ModelConfig& mcfg, const TrainConfig& tcfg);

// Deterministic sequence-level split (seeded by (seed, "split")).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double val_frac,
                                          uint64_t seed);

}  // namespace fhvae
