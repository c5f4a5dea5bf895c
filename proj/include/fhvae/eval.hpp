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

#include "fhvae/trainer.hpp"

namespace fhvae {

// ---------------------------------------------------------------------------
// Verification trials and the equal error rate
// ---------------------------------------------------------------------------

struct Trial {
  std::string id_a, id_b;
  bool same_source = false;
  double score = 0.0;  // cosine similarity of the two s-vectors
};
using TrialSet = std::vector<Trial>;

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Equal error rate via a threshold sweep over the sorted scores, with linear
// interpolation where the false-accept and false-reject curves cross between
// samples. DataError on a degenerate trial set (needs >= 1 positive and
// >= 1 negative).
double eer(const TrialSet& trials);
double eer_from_scores(std::vector<double> positive,
                       std::vector<double> negative);

struct TrialSpec {
  std::string label_key = "factor";  // same-source = equal label
  size_t max_trials = 20000;         // cap on cross-sequence pairs
  uint64_t seed = 0;                 // subsampling stream
  size_t seg_shift = 0;              // 0 = non-overlapping
};

// MAP s-vector per held-out sequence, cosine-scored over cross-sequence
// pairs. DataError when a sequence is too short to segment.
TrialSet score_trials(const FhvaeParams& params, const Dataset& heldout,
                      const TrialSpec& spec);

// ---------------------------------------------------------------------------
// Per-segment embedding dump (posterior means)
// ---------------------------------------------------------------------------

struct EmbeddingDump {
  size_t n = 0, d_z1 = 0, d_z2 = 0;
  std::vector<std::string> seq_id;
  std::vector<size_t> seg_index;
  std::vector<size_t> dataset_seq;       // index into the source dataset
  std::vector<double> z1_bar, z2_bar;    // row-major n x d
};

// z2_bar is the q(z2|x) posterior mean; z1_bar conditions the z1 encoder on
// that mean (the deterministic evaluation path).
EmbeddingDump embed_segments(const FhvaeParams& params, const Dataset& data,
                             size_t seg_shift = 0, size_t max_segments = 0);

// Split-half nearest-centroid classification: centroids from even rows,
// accuracy over odd rows. Labels must be < n_classes.
double centroid_split_accuracy(const std::vector<double>& emb, size_t n,
                               size_t d, const std::vector<size_t>& labels,
                               size_t n_classes);

// ---------------------------------------------------------------------------
// Exact t-SNE
// ---------------------------------------------------------------------------

struct TsneConfig {
  double perplexity = 30.0;
  size_t iterations = 1000;
  double early_exaggeration = 12.0;
  size_t exaggeration_iters = 250;
  double momentum_start = 0.5;
  double momentum_final = 0.8;
  size_t momentum_switch = 250;
  double learning_rate = 200.0;
  uint64_t seed = 0;
};

struct TsneResult {
  std::vector<double> coords;  // n x 2
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

// Exact (non-tree) t-SNE: per-point bandwidths by bisection to match the
// perplexity within 1e-4, early exaggeration, momentum schedule. Duplicate
// points are separated by a deterministic 1e-9 jitter. Requires
// n >= 3 * perplexity.
TsneResult tsne_embed(const std::vector<double>& points, size_t n, size_t d,
                      const TsneConfig& cfg);

// Bisection helper exposed for tests: conditional probabilities of row i at
// the beta matched to the target perplexity.
std::vector<double> tsne_conditional_row(const std::vector<double>& sqdist_row,
                                         size_t i, double perplexity,
                                         double* perp_out = nullptr);

// ---------------------------------------------------------------------------
// Latent recombination
// ---------------------------------------------------------------------------

// Samples z1 from q(z1 | xa, z2a-sample) and z2 from q(z2 | xb); returns the
// decoder mean frames of p(x | z1A, z2B) as [T x d_x]. Draw order: z2 of A,
// z1 of A, z2 of B.
Tensor recombine(const FhvaeParams& params, const Segment& xa,
                 const Segment& xb, Rng& rng);

// ---------------------------------------------------------------------------
// Denominator scaling experiment
// ---------------------------------------------------------------------------

struct DenomScalingResult {
  std::vector<size_t> m_list;
  std::vector<double> mean_log_denominator;        // per M
  std::vector<std::vector<double>> samples;        // per M, per draw
  double slope = 0.0;  // least-squares slope vs ln M
};

// With z and the M table entries drawn iid N(0, I_d) per draw, estimates
// E[log sum_j N(z; mu_j, kernel_var I)] for each M. kernel_var defaults to
// 2.0 = E[(z_i - mu_i)^2], which keeps the sum in its many-comparable-terms
// regime; the model's sigma_sq_z2 value is far below that spread at d=32
// and puts the sum in a nearest-neighbor regime instead.
DenomScalingResult denominator_scaling(size_t d,
                                       const std::vector<size_t>& m_list,
                                       size_t draws, uint64_t seed,
                                       double kernel_var = 2.0);

// ---------------------------------------------------------------------------
// Step-time benchmark
// ---------------------------------------------------------------------------

struct BenchRow {
  size_t K = 0;
  double median_ms = 0.0;
  double p10_ms = 0.0;
  double p90_ms = 0.0;
  double alpha_zero_median_ms = 0.0;
};

// Median wall time of the full optimization step (loss + backward + update)
// per K, warmup excluded, with an alpha = 0 ablation. The dataset must hold
// at least max(K) sequences.
std::vector<BenchRow> bench_step_time(const Dataset& data,
                                      const ModelConfig& mcfg,
                                      const TrainConfig& base,
                                      const std::vector<size_t>& k_list,
                                      size_t warmup, size_t reps);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace fhvae
