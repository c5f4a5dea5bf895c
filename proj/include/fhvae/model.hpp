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

#include <string>
#include <utility>
#include <vector>

#include "fhvae/config.hpp"
#include "fhvae/gaussian.hpp"
#include "fhvae/rng.hpp"
#include "fhvae/tensor.hpp"

namespace fhvae {

// Architecture and numeric settings. The constructor defaults are the
// desk-scale configuration; paper_scale() gives the full-size speech setup
// (2x256 LSTM, 32-dim latents, 80-dim frames, 20-frame segments).
struct ModelConfig {
  size_t layers = 1;
  size_t hidden = 64;
  size_t d_z1 = 16;
  size_t d_z2 = 16;
  size_t d_x = 8;
  size_t seg_len = 20;  // frames per segment (T)
  double sigma_sq_z2 = 0.25;
  double var_floor = 1e-6;

  static ModelConfig paper_scale();
  static ModelConfig from_kv(const KvMap& kv);
  void to_kv(KvMap& kv) const;
  void validate() const;
};

// One LSTM layer; gate order in the fused weight is (input, forget, cell,
// output). The forget-gate bias block starts at 1.
struct LstmLayer {
  Tensor w_x;  // [in x 4H]
  Tensor w_h;  // [H x 4H]
  Tensor b;    // [4H]
};

struct Affine {
  Tensor w;  // [in x out]
  Tensor b;  // [out]
};

// All trainable weights. Heads emit mean and log-variance fused as
// [.. x 2d]; z-heads read the concatenated last-step hidden states of every
// pre-network layer (L*H), the x head reads the top layer per step (H).
struct FhvaeParams {
  ModelConfig cfg;
  std::vector<LstmLayer> z2_pre, z1_pre, dec_pre;
  Affine z2_head, z1_head, x_head;

  static FhvaeParams init(const ModelConfig& cfg, Rng& rng);

  // Stable name -> tensor registry (checkpoint and optimizer order).
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  FhvaeParams clone() const;
  void zero_grad();
  size_t param_count() const;
};

// Fixed-length feature window with provenance.
struct Segment {
  Tensor frames;  // [T x d_x]
  std::string seq_id;
  size_t index = 0;
};

// Time-major minibatch: frames[t] is [B x d_x].
struct FrameBatch {
  std::vector<Tensor> frames;
  size_t batch = 0;
};

// Batched diagonal-Gaussian head output.
struct GaussBatch {
  Tensor mean;  // [B x d]
  Tensor var;   // [B x d]
};

FrameBatch make_frame_batch(const std::vector<const Segment*>& segs,
                            const ModelConfig& cfg,
                            bool requires_grad = false);

// q(z2 | x): z2 pre-network over T frames, last-step hidden states of all
// layers concatenated, then the z2 head.
GaussBatch encode_z2(Graph& g, const FhvaeParams& p, const FrameBatch& x);

// q(z1 | x, z2): z2 sample appended to every frame before the z1 pre-network.
GaussBatch encode_z1(Graph& g, const FhvaeParams& p, const FrameBatch& x,
                     const Tensor& z2_rows);

// p(x | z1, z2): [z1 || z2] fed as the decoder input at every step; one
// Gaussian per frame.
std::vector<GaussBatch> decode_x_rows(Graph& g, const FhvaeParams& p,
                                 const Tensor& z1_rows, const Tensor& z2_rows);

// Single-segment wrappers (rank-1 distributions).
DiagGaussian encode_z2(Graph& g, const FhvaeParams& p, const Segment& x);
DiagGaussian encode_z1(Graph& g, const FhvaeParams& p, const Segment& x,
                       const Tensor& z2_sample);
std::vector<DiagGaussian> decode_x(Graph& g, const FhvaeParams& p,
                                   const Tensor& z1, const Tensor& z2);

// MAP estimate of the s-vector posterior mean over one sequence:
//   sum_n g_mu_z2(x_n) / (N + sigma_sq_z2).
// All segments must share one seq_id (Error on empty or mixed lists).
std::vector<double> infer_svector_map(const FhvaeParams& p,
                                      const std::vector<Segment>& segments);

// Same MAP formula over pre-computed encoder means (rows of [N x d_z2]).
std::vector<double> svector_from_means(const std::vector<double>& mean_rows,
                                       size_t n_rows, size_t d,
                                       double sigma_sq_z2);

// ---------------------------------------------------------------------------
// Checkpoint: magic "FHVC", version, config echo, then a name -> offset
// manifest of TNSR blobs.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const FhvaeParams& params,
                     const KvMap& config_echo);

struct Checkpoint {
  FhvaeParams params;
  KvMap config_echo;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace fhvae
