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

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fhvae/model.hpp"

namespace fhvae {

// Trainable table of s-vector posterior means, one row per cached sequence.
// K is fixed for a training run, independent of the dataset size.
struct SVectorCache {
  Tensor table;                    // [K x d_z2], requires_grad
  std::vector<int64_t> slot_seq;   // dataset sequence index per slot, -1 free
  std::vector<uint32_t> seg_counts;
  std::unordered_map<int64_t, size_t> seq_to_slot;

  static SVectorCache create(size_t k, size_t d);

  size_t entries() const { return table.dim(0); }
  size_t dim() const { return table.dim(1); }
  size_t bytes() const { return table.numel() * sizeof(double); }

  // Slot lookup; Error when the sequence is not cached.
  size_t slot_for(int64_t seq_index) const;

  // Rebinds a slot to a sequence and overwrites its value (used by MAP
  // resets and by flat-cache initialization).
  void assign(size_t slot, int64_t seq_index, uint32_t seg_count,
              const std::vector<double>& value);
};

// Per-step scalar summary of the optimized objective. Terms are batch means;
// total = -(recon_ll - kl_z1 - kl_z2 + log_prior_mu2 + alpha*disc_log_prob)
// where log_prior_mu2 already carries its 1/N weight.
struct LossBreakdown {
  double total = 0.0;
  double recon_ll = 0.0;
  double kl_z1 = 0.0;
  double kl_z2 = 0.0;
  double log_prior_mu2 = 0.0;
  double disc_log_prob = 0.0;
  double wall_ms = 0.0;

  static std::string csv_header();
  std::string csv_row(size_t step) const;
};

// Row-wise pieces of the segment variational lower bound plus the tensors
// later terms reuse (the discriminative term reads q_z2.mean).
struct BoundRows {
  Tensor recon;   // [B] E_q[log p(x | z1, z2)], one sample
  Tensor kl_z1;   // [B] KL(q(z1|x,z2) || N(0, I)), same z2 sample
  Tensor kl_z2;   // [B] KL(q(z2|x) || N(mu2_hat, sigma^2 I))
  Tensor prior;   // [B] log p(mu2_hat) / N
  GaussBatch q_z2, q_z1;
  Tensor z2_sample, z1_sample;  // [B x d]

  // recon - kl_z1 - kl_z2 + prior, per row.
  Tensor bound(Graph& g) const;
};

// Builds the bound terms for a batch. mu2_rows is [B x d_z2] (cache rows or
// explicit MAP estimates); counts[b] is the segment count N of row b's
// sequence; eps2/eps1 are the reparameterization draws ([B x d_z2],
// [B x d_z1]). NumericError names the first non-finite term.
BoundRows segment_bound_rows(Graph& g, const FhvaeParams& p,
                             const FrameBatch& x, const Tensor& mu2_rows,
                             const std::vector<uint32_t>& counts,
                             const Tensor& eps2, const Tensor& eps1);

// log p(slot | z2_bar) = log N(z2_bar; table[slot], s^2 I)
//                      - logsumexp_j log N(z2_bar; table[j], s^2 I), per row.
// The Gaussian normalizers cancel; computed as a stable log-softmax of
// -||z2_bar - table[j]||^2 / (2 s^2). Always <= 0; == 0 when K == 1.
Tensor disc_log_prob_rows(Graph& g, const Tensor& z2_mean_rows,
                          const Tensor& table,
                          const std::vector<size_t>& slots,
                          double sigma_sq_z2);

// Single-segment evaluation of the bound against an explicit mu2_hat, with
// the prior term weighted by 1/n_segments; draws one reparameterized sample
// pair from eps_rng (z2 first, then z1, row-major). Returns the bound value
// with components.
struct SegmentBound {
  double bound = 0.0;
  double recon_ll = 0.0, kl_z1 = 0.0, kl_z2 = 0.0, log_prior_mu2 = 0.0;
};
SegmentBound segment_lower_bound(const FhvaeParams& p, const Segment& x,
                                 const std::vector<double>& mu2_hat,
                                 uint32_t n_segments, Rng& eps_rng);

// Single-vector evaluation of the discriminative log-probability.
double discriminative_log_prob(const std::vector<double>& z2_mean,
                               const SVectorCache& cache, size_t slot,
                               double sigma_sq_z2);

// Batch for the training objective: segments plus their dataset sequence
// indices (resolved against the cache inside total_loss).
struct LossBatch {
  FrameBatch frames;
  std::vector<int64_t> seq_indices;  // one per segment
};

// The full training objective over a batch: mean of -(bound + alpha *
// disc). Builds the graph and returns the scalar loss tensor; fills `bd`
// with batch-mean components. Error when a segment's sequence has no cache
// slot. alpha = 0 skips the discriminative term altogether (and reports it
// as zero), which is what makes the step-time ablation meaningful.
Tensor total_loss(Graph& g, const FhvaeParams& p, const SVectorCache& cache,
                  const LossBatch& batch, double alpha, Rng& eps_rng,
                  LossBreakdown* bd);

}  // namespace fhvae
