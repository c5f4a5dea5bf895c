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

#include <cstddef>
#include <string>
#include <vector>

namespace fhvae::kernels {

// Data-parallel f64 inner loops behind the tensor engine, the optimizer and
// the distance computations. Two implementations ship: a scalar reference
// and an AVX2+FMA variant; the active one is selected at runtime from CPU
// features (override with FHVAE_KERNELS=scalar|avx2 or force()).
//
// Elementwise kernels (add/sub/mul/div/sqrt/scale/axpy/fmacc/adam_update)
// produce bit-identical results in both variants. Reductions and GEMM
// (sum/dot/sqdist/gemm_*) reassociate and may use FMA, so they agree with
// the scalar reference only to rounding; the equivalence suite pins the
// tolerances.
struct Kernels {
  const char* name;

  // out = a op b, elementwise over n values.
  void (*add)(const double* a, const double* b, double* out, size_t n);
  void (*sub)(const double* a, const double* b, double* out, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  void (*div)(const double* a, const double* b, double* out, size_t n);
  void (*vsqrt)(const double* a, double* out, size_t n);

  // out = c * a;  y += c * x;  y += a .* b
  void (*scale)(const double* a, double c, double* out, size_t n);
  void (*axpy)(double c, const double* x, double* y, size_t n);
  void (*fmacc)(const double* a, const double* b, double* y, size_t n);

  // Reductions.
  double (*sum)(const double* a, size_t n);
  double (*dot)(const double* a, const double* b, size_t n);
  double (*vmax)(const double* a, size_t n);        // n >= 1
  double (*sqdist)(const double* a, const double* b, size_t n);

  // Row-major GEMM, accumulating into C (caller zero-fills for a plain
  // product). A is m x k, B is k x n, C is m x n unless noted.
  void (*gemm_nn)(size_t m, size_t k, size_t n, const double* a,
                  const double* b, double* c);
  // C += A * B^T where B is stored n x k.
  void (*gemm_nt)(size_t m, size_t k, size_t n, const double* a,
                  const double* bt, double* c);
  // C += A^T * B where A is stored k x m.
  void (*gemm_tn)(size_t m, size_t k, size_t n, const double* at,
                  const double* b, double* c);

  // Fused Adam update over one parameter block:
  //   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g*g;
  //   p -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
  // bc1/bc2 are the bias corrections (1 - beta^t), precomputed by the caller.
  void (*adam_update)(double* p, double* m, double* v, const double* g,
                      size_t n, double lr, double b1, double b2, double eps,
                      double bc1, double bc2);
};

// The dispatch-selected kernel table. First call probes CPU features and the
// FHVAE_KERNELS environment variable.
const Kernels& active();

// Force a specific variant ("scalar" or "avx2"); throws Error if the variant
// is not available on this host. Intended for tests and benchmarks; not
// thread-safe against concurrent kernel use.
void force(const std::string& name);

// Names of the variants usable on this host.
std::vector<std::string> available();

const Kernels& scalar_table();
const Kernels* avx2_table();  // nullptr when unsupported at build or run time

}  // namespace fhvae::kernels
