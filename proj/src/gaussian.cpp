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

#include "fhvae/gaussian.hpp"

#include <cmath>

namespace fhvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

void check_positive_var(const Tensor& var) {
  for (size_t i = 0; i < var.numel(); ++i)
    if (!(var.data()[i] > 0.0))
      throw DomainError("DiagGaussian: variance element " + std::to_string(i) +
                        " is " + std::to_string(var.data()[i]) +
                        ", must be strictly positive");
}

void check_rows(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected [B x d], got " +
                     t.shape_str());
}

}  // namespace

DiagGaussian make_diag_gaussian(Tensor mean, Tensor var) {
  if (mean.shape() != var.shape())
    throw ShapeError("DiagGaussian: mean " + mean.shape_str() + " vs var " +
                     var.shape_str());
  check_positive_var(var);
  return {std::move(mean), std::move(var)};
}

DiagGaussian gaussian_from_logvar(Graph& g, Tensor mean, Tensor logvar,
                                  double var_floor) {
  if (mean.shape() != logvar.shape())
    throw ShapeError("DiagGaussian: mean " + mean.shape_str() + " vs logvar " +
                     logvar.shape_str());
  Tensor var = ops::add_scalar(g, ops::exp(g, logvar), var_floor);
  return {std::move(mean), std::move(var)};
}

namespace gauss {

namespace {

// Shared body for the scalar and row-batched log-density:
//   -1/2 sum_i [ ln(2 pi var_i) + (x_i - m_i)^2 / var_i ]
Tensor log_pdf_impl(Graph& g, const Tensor& mean, const Tensor& var,
                    const Tensor& x, int axis, double d) {
  Tensor diff = ops::sub(g, x, mean);
  Tensor ratio = ops::div(g, ops::mul(g, diff, diff), var);
  Tensor inner = ops::add(g, ops::log(g, var), ratio);
  Tensor s = ops::sum(g, inner, axis);
  return ops::add_scalar(g, ops::scale(g, s, -0.5), -0.5 * d * kLog2Pi);
}

}  // namespace

Tensor log_pdf(Graph& g, const DiagGaussian& gsn, const Tensor& x) {
  if (x.shape() != gsn.mean.shape())
    throw ShapeError("log_pdf: x " + x.shape_str() + " vs mean " +
                     gsn.mean.shape_str());
  return log_pdf_impl(g, gsn.mean, gsn.var, x, -1,
                      static_cast<double>(gsn.dim()));
}

Tensor log_pdf_rows(Graph& g, const Tensor& mean, const Tensor& var,
                    const Tensor& x) {
  check_rows("log_pdf_rows", mean);
  if (x.shape() != mean.shape() || var.shape() != mean.shape())
    throw ShapeError("log_pdf_rows: mismatched shapes " + x.shape_str() +
                     ", " + mean.shape_str() + ", " + var.shape_str());
  return log_pdf_impl(g, mean, var, x, 1, static_cast<double>(mean.dim(1)));
}

namespace {

// KL(q || p) = 1/2 sum_i [ ln(pv_i/qv_i) + (qv_i + (qm_i-pm_i)^2)/pv_i - 1 ]
// p-side tensors may be rank-1 and are then shared across rows of q.
Tensor kl_impl(Graph& g, const Tensor& qm, const Tensor& qv, const Tensor& pm,
               const Tensor& pv, int axis, double d) {
  Tensor diff = ops::sub(g, qm, pm);  // row-broadcast when pm is rank-1
  Tensor num = ops::add(g, qv, ops::mul(g, diff, diff));
  Tensor pv_full = pv;
  if (pv.shape() != num.shape()) {
    // Tile the shared prior variance across rows; the zero tensor carries no
    // gradient, so adjoints still reach pv through the row broadcast.
    pv_full = ops::add(g, Tensor::zeros(num.shape()), pv);
  }
  Tensor ratio = ops::div(g, num, pv_full);
  Tensor logterm = ops::sub(g, ops::log(g, pv_full), ops::log(g, qv));
  Tensor inner = ops::add(g, logterm, ratio);
  Tensor s = ops::sum(g, inner, axis);
  return ops::add_scalar(g, ops::scale(g, s, 0.5), -0.5 * d);
}

}  // namespace

Tensor kl(Graph& g, const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mean.shape() != p.mean.shape())
    throw ShapeError("kl: dimension mismatch " + q.mean.shape_str() + " vs " +
                     p.mean.shape_str());
  return kl_impl(g, q.mean, q.var, p.mean, p.var, -1,
                 static_cast<double>(q.dim()));
}

Tensor kl_rows(Graph& g, const Tensor& q_mean, const Tensor& q_var,
               const Tensor& p_mean, const Tensor& p_var) {
  check_rows("kl_rows", q_mean);
  if (q_var.shape() != q_mean.shape())
    throw ShapeError("kl_rows: q_var " + q_var.shape_str() + " vs mean " +
                     q_mean.shape_str());
  const size_t d = q_mean.dim(1);
  auto p_ok = [d, &q_mean](const Tensor& t) {
    return t.shape() == q_mean.shape() || (t.rank() == 1 && t.dim(0) == d);
  };
  if (!p_ok(p_mean) || !p_ok(p_var))
    throw ShapeError("kl_rows: p-side must be [B x d] or [d]");
  return kl_impl(g, q_mean, q_var, p_mean, p_var, 1, static_cast<double>(d));
}

Tensor reparam_sample(Graph& g, const DiagGaussian& gsn, const Tensor& eps) {
  if (eps.shape() != gsn.mean.shape())
    throw ShapeError("reparam_sample: eps " + eps.shape_str() + " vs mean " +
                     gsn.mean.shape_str());
  return ops::add(g, gsn.mean, ops::mul(g, ops::sqrt(g, gsn.var), eps));
}

Tensor reparam_sample_rows(Graph& g, const Tensor& mean, const Tensor& var,
                           const Tensor& eps) {
  if (eps.shape() != mean.shape() || var.shape() != mean.shape())
    throw ShapeError("reparam_sample_rows: mismatched shapes");
  return ops::add(g, mean, ops::mul(g, ops::sqrt(g, var), eps));
}

}  // namespace gauss

}  // namespace fhvae
