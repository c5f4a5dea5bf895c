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

#include "fhvae/tensor.hpp"

namespace fhvae {

// Variance of the sequence-conditioned prior p(z2 | mu2).
struct PriorConfig {
  double sigma_sq_z2 = 0.25;
};

// Diagonal Gaussian over d dimensions: rank-1 mean and strictly positive
// rank-1 variance. Both tensors may participate in a graph, so densities and
// divergences are differentiable w.r.t. mean, var and the evaluation point.
struct DiagGaussian {
  Tensor mean;
  Tensor var;

  size_t dim() const { return mean.numel(); }
};

// Validates shapes and positivity (DomainError on var <= 0).
DiagGaussian make_diag_gaussian(Tensor mean, Tensor var);

// Encoder-head construction: var = exp(logvar) + floor, which keeps the
// variance strictly positive for any head output.
DiagGaussian gaussian_from_logvar(Graph& g, Tensor mean, Tensor logvar,
                                  double var_floor);

namespace gauss {

// log N(x; mean, diag(var)) summed over dimensions -> scalar tensor.
Tensor log_pdf(Graph& g, const DiagGaussian& gsn, const Tensor& x);

// KL(q || p) for diagonal Gaussians -> scalar tensor, always >= 0.
Tensor kl(Graph& g, const DiagGaussian& q, const DiagGaussian& p);

// mean + sqrt(var) .* eps. Gradients flow to mean and var, never to eps.
Tensor reparam_sample(Graph& g, const DiagGaussian& gsn, const Tensor& eps);

// Row-batched variants over [B x d] tensors, returning [B]. The p-side of
// kl_rows accepts [B x d] or a shared rank-1 [d] prior.
Tensor log_pdf_rows(Graph& g, const Tensor& mean, const Tensor& var,
                    const Tensor& x);
Tensor kl_rows(Graph& g, const Tensor& q_mean, const Tensor& q_var,
               const Tensor& p_mean, const Tensor& p_var);
Tensor reparam_sample_rows(Graph& g, const Tensor& mean, const Tensor& var,
                           const Tensor& eps);

}  // namespace gauss

}  // namespace fhvae
