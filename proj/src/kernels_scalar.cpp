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

// Scalar reference kernels. This translation unit is built with baseline
// flags only (no -mfma), so the compiler cannot contract mul+add; these
// loops define the reference semantics the SIMD variants are tested against.

#include <cmath>

#include "fhvae/kernels.hpp"

namespace fhvae::kernels {
namespace {

void s_add(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_div(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void s_vsqrt(const double* a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
}

void s_scale(const double* a, double c, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = c * a[i];
}

void s_axpy(double c, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

void s_fmacc(const double* a, const double* b, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

double s_sum(const double* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double s_dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_vmax(const double* a, size_t n) {
  double m = a[0];
  for (size_t i = 1; i < n; ++i) m = a[i] > m ? a[i] : m;
  return m;
}

double s_sqdist(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void s_gemm_nn(size_t m, size_t k, size_t n, const double* a, const double* b,
               double* c) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_gemm_nt(size_t m, size_t k, size_t n, const double* a, const double* bt,
               double* c) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = bt + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

void s_gemm_tn(size_t m, size_t k, size_t n, const double* at, const double* b,
               double* c) {
  for (size_t p = 0; p < k; ++p) {
    const double* arow = at + p * m;
    const double* brow = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_adam_update(double* p, double* m, double* v, const double* g, size_t n,
                   double lr, double b1, double b2, double eps, double bc1,
                   double bc2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

const Kernels& scalar_table() {
  static const Kernels table = {
      "scalar", s_add,    s_sub,    s_mul,     s_div,     s_vsqrt,
      s_scale,  s_axpy,   s_fmacc,  s_sum,     s_dot,     s_vmax,
      s_sqdist, s_gemm_nn, s_gemm_nt, s_gemm_tn, s_adam_update,
  };
  return table;
}

}  // namespace fhvae::kernels
