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

#include "fhvae/objective.hpp"

#include <cmath>
#include <sstream>

#include "fhvae/kernels.hpp"
#include "fhvae/util.hpp"

namespace fhvae {

// ---------------------------------------------------------------------------
// SVectorCache
// ---------------------------------------------------------------------------

SVectorCache SVectorCache::create(size_t k, size_t d) {
  if (k < 1 || d < 1) throw ConfigError("cache needs K >= 1 and d >= 1");
  SVectorCache c;
  c.table = Tensor::zeros({k, d}, /*requires_grad=*/true);
  c.slot_seq.assign(k, -1);
  c.seg_counts.assign(k, 0);
  return c;
}

size_t SVectorCache::slot_for(int64_t seq_index) const {
  auto it = seq_to_slot.find(seq_index);
  if (it == seq_to_slot.end())
    throw Error("cache invariant violated: sequence " +
                std::to_string(seq_index) + " has no cache slot");
  return it->second;
}

void SVectorCache::assign(size_t slot, int64_t seq_index, uint32_t seg_count,
                          const std::vector<double>& value) {
  if (slot >= entries()) throw Error("cache slot out of range");
  if (value.size() != dim())
    throw ShapeError("cache assign: value dim " + std::to_string(value.size()) +
                     " vs table dim " + std::to_string(dim()));
  if (seg_count == 0)
    throw DataError("cache assign: sequence with zero segments");
  const int64_t old = slot_seq[slot];
  if (old >= 0) {
    // Only drop the reverse mapping if it still points at this slot; the
    // sequence may have been re-assigned elsewhere in the same reset.
    auto it = seq_to_slot.find(old);
    if (it != seq_to_slot.end() && it->second == slot) seq_to_slot.erase(it);
  }
  slot_seq[slot] = seq_index;
  seg_counts[slot] = seg_count;
  seq_to_slot[seq_index] = slot;
  double* row = table.data_mut().data() + slot * dim();
  std::copy(value.begin(), value.end(), row);
}

// ---------------------------------------------------------------------------
// LossBreakdown CSV
// ---------------------------------------------------------------------------

std::string LossBreakdown::csv_header() {
  return "step,total,recon_ll,kl_z1,kl_z2,log_prior_mu2,disc_log_prob,wall_ms";
}

std::string LossBreakdown::csv_row(size_t step) const {
  std::ostringstream os;
  os << step << "," << fmt_f64(total) << "," << fmt_f64(recon_ll) << ","
     << fmt_f64(kl_z1) << "," << fmt_f64(kl_z2) << ","
     << fmt_f64(log_prior_mu2) << "," << fmt_f64(disc_log_prob) << ","
     << fmt_f64(wall_ms);
  return os.str();
}

// ---------------------------------------------------------------------------
// Bound terms
// ---------------------------------------------------------------------------

namespace {

void check_finite(const Tensor& t, const char* term) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw NumericError(std::string("objective: term ") + term +
                         " is non-finite");
}

double mean_of(const Tensor& rows) {
  return kernels::active().sum(rows.data().data(), rows.numel()) /
         static_cast<double>(rows.numel());
}

}  // namespace

Tensor BoundRows::bound(Graph& g) const {
  Tensor b = ops::sub(g, recon, kl_z1);
  b = ops::sub(g, b, kl_z2);
  return ops::add(g, b, prior);
}

BoundRows segment_bound_rows(Graph& g, const FhvaeParams& p,
                             const FrameBatch& x, const Tensor& mu2_rows,
                             const std::vector<uint32_t>& counts,
                             const Tensor& eps2, const Tensor& eps1) {
  const size_t B = x.batch;
  const size_t d1 = p.cfg.d_z1, d2 = p.cfg.d_z2;
  if (mu2_rows.rank() != 2 || mu2_rows.dim(0) != B || mu2_rows.dim(1) != d2)
    throw ShapeError("segment_bound_rows: mu2 rows " + mu2_rows.shape_str());
  if (counts.size() != B)
    throw ShapeError("segment_bound_rows: counts size mismatch");
  for (uint32_t c : counts)
    if (c == 0) throw DataError("segment_bound_rows: zero segment count");

  BoundRows out;
  out.q_z2 = encode_z2(g, p, x);
  out.z2_sample =
      gauss::reparam_sample_rows(g, out.q_z2.mean, out.q_z2.var, eps2);
  out.q_z1 = encode_z1(g, p, x, out.z2_sample);
  out.z1_sample =
      gauss::reparam_sample_rows(g, out.q_z1.mean, out.q_z1.var, eps1);

  // One-sample reconstruction term, summed over frames.
  auto frames = decode_x_rows(g, p, out.z1_sample, out.z2_sample);
  Tensor recon = Tensor::zeros({B});
  for (size_t t = 0; t < frames.size(); ++t)
    recon = ops::add(
        g, recon,
        gauss::log_pdf_rows(g, frames[t].mean, frames[t].var, x.frames[t]));
  out.recon = recon;
  check_finite(out.recon, "recon_ll");

  // KL(q(z1|x,z2) || N(0, I)); the same z2 sample estimates the outer
  // expectation over q(z2|x).
  out.kl_z1 = gauss::kl_rows(g, out.q_z1.mean, out.q_z1.var,
                             Tensor::zeros({d1}), Tensor::full({d1}, 1.0));
  check_finite(out.kl_z1, "kl_z1");

  // KL(q(z2|x) || N(mu2_hat, sigma^2 I)), closed form.
  out.kl_z2 =
      gauss::kl_rows(g, out.q_z2.mean, out.q_z2.var, mu2_rows,
                     Tensor::full({d2}, p.cfg.sigma_sq_z2));
  check_finite(out.kl_z2, "kl_z2");

  // log p(mu2_hat) under N(0, I), weighted 1/N per row.
  Tensor logp_mu2 = gauss::log_pdf_rows(g, Tensor::zeros({B, d2}),
                                        Tensor::full({B, d2}, 1.0), mu2_rows);
  Tensor inv_n = Tensor::zeros({B});
  for (size_t b = 0; b < B; ++b)
    inv_n.data_mut()[b] = 1.0 / static_cast<double>(counts[b]);
  out.prior = ops::mul(g, logp_mu2, inv_n);
  check_finite(out.prior, "log_prior_mu2");
  return out;
}

Tensor disc_log_prob_rows(Graph& g, const Tensor& z2_mean_rows,
                          const Tensor& table,
                          const std::vector<size_t>& slots,
                          double sigma_sq_z2) {
  if (z2_mean_rows.rank() != 2 || table.rank() != 2 ||
      z2_mean_rows.dim(1) != table.dim(1))
    throw ShapeError("disc_log_prob_rows: rows " + z2_mean_rows.shape_str() +
                     " vs table " + table.shape_str());
  if (slots.size() != z2_mean_rows.dim(0))
    throw ShapeError("disc_log_prob_rows: one slot per row required");
  for (size_t s : slots)
    if (s >= table.dim(0))
      throw Error("disc_log_prob_rows: slot " + std::to_string(s) +
                  " out of range");
  Tensor sq = ops::pairwise_sqdist(g, z2_mean_rows, table);
  Tensor logits = ops::scale(g, sq, -0.5 / sigma_sq_z2);
  Tensor lse = ops::logsumexp(g, logits, 1);
  Tensor numer = ops::take_per_row(g, logits, slots);
  Tensor disc = ops::sub(g, numer, lse);
  check_finite(disc, "disc_log_prob");
  return disc;
}

// ---------------------------------------------------------------------------
// Single-segment evaluation forms
// ---------------------------------------------------------------------------

SegmentBound segment_lower_bound(const FhvaeParams& p, const Segment& x,
                                 const std::vector<double>& mu2_hat,
                                 uint32_t n_segments, Rng& eps_rng) {
  if (n_segments < 1)
    throw DataError("segment_lower_bound: segment count must be >= 1");
  if (mu2_hat.size() != p.cfg.d_z2)
    throw ShapeError("segment_lower_bound: mu2_hat dim " +
                     std::to_string(mu2_hat.size()));
  Graph g;
  g.recording = false;
  FrameBatch fb = make_frame_batch({&x}, p.cfg);
  Tensor mu2 = Tensor::from_data({1, p.cfg.d_z2},
                                 std::vector<double>(mu2_hat));
  Tensor eps2 = Tensor::zeros({1, p.cfg.d_z2});
  eps_rng.fill_normal(eps2.data_mut().data(), eps2.numel());
  Tensor eps1 = Tensor::zeros({1, p.cfg.d_z1});
  eps_rng.fill_normal(eps1.data_mut().data(), eps1.numel());
  BoundRows rows = segment_bound_rows(g, p, fb, mu2, {n_segments}, eps2, eps1);
  SegmentBound out;
  out.recon_ll = rows.recon.data()[0];
  out.kl_z1 = rows.kl_z1.data()[0];
  out.kl_z2 = rows.kl_z2.data()[0];
  out.log_prior_mu2 = rows.prior.data()[0];
  out.bound = rows.bound(g).data()[0];
  return out;
}

double discriminative_log_prob(const std::vector<double>& z2_mean,
                               const SVectorCache& cache, size_t slot,
                               double sigma_sq_z2) {
  if (slot >= cache.entries())
    throw Error("discriminative_log_prob: slot " + std::to_string(slot) +
                " out of range for K=" + std::to_string(cache.entries()));
  if (z2_mean.size() != cache.dim())
    throw ShapeError("discriminative_log_prob: dim mismatch");
  Graph g;
  g.recording = false;
  Tensor rows = Tensor::from_data({1, cache.dim()},
                                  std::vector<double>(z2_mean));
  return disc_log_prob_rows(g, rows, cache.table, {slot}, sigma_sq_z2)
      .data()[0];
}

// ---------------------------------------------------------------------------
// total_loss (discriminative bound over a batch)
// ---------------------------------------------------------------------------

Tensor total_loss(Graph& g, const FhvaeParams& p, const SVectorCache& cache,
                  const LossBatch& batch, double alpha, Rng& eps_rng,
                  LossBreakdown* bd) {
  const size_t B = batch.frames.batch;
  if (batch.seq_indices.size() != B)
    throw ShapeError("total_loss: one sequence index per segment required");
  std::vector<size_t> slots(B);
  std::vector<uint32_t> counts(B);
  for (size_t b = 0; b < B; ++b) {
    slots[b] = cache.slot_for(batch.seq_indices[b]);
    counts[b] = cache.seg_counts[slots[b]];
  }

  Tensor eps2 = Tensor::zeros({B, p.cfg.d_z2});
  eps_rng.fill_normal(eps2.data_mut().data(), eps2.numel());
  Tensor eps1 = Tensor::zeros({B, p.cfg.d_z1});
  eps_rng.fill_normal(eps1.data_mut().data(), eps1.numel());

  Tensor mu2_rows = ops::embed_rows(g, cache.table, slots);
  BoundRows rows =
      segment_bound_rows(g, p, batch.frames, mu2_rows, counts, eps2, eps1);

  // alpha = 0 removes the discriminative term entirely (it is the term
  // whose cost scales with K, so the ablation must not compute it).
  Tensor objective = rows.bound(g);
  Tensor disc = Tensor::zeros({B});
  if (alpha != 0.0) {
    disc = disc_log_prob_rows(g, rows.q_z2.mean, cache.table, slots,
                              p.cfg.sigma_sq_z2);
    objective = ops::add(g, objective, ops::scale(g, disc, alpha));
  }
  Tensor loss = ops::negate(g, ops::mean(g, objective));

  if (bd) {
    bd->recon_ll = mean_of(rows.recon);
    bd->kl_z1 = mean_of(rows.kl_z1);
    bd->kl_z2 = mean_of(rows.kl_z2);
    bd->log_prior_mu2 = mean_of(rows.prior);
    bd->disc_log_prob = mean_of(disc);
    bd->total = loss.item();
  }
  return loss;
}

}  // namespace fhvae
