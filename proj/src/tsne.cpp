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

// Exact t-SNE (quadratic memory), adequate for desk-scale n <= ~5000.

#include <algorithm>
#include <cmath>

#include "fhvae/eval.hpp"
#include "fhvae/kernels.hpp"
#include "fhvae/util.hpp"

namespace fhvae {

namespace {

constexpr double kProbFloor = 1e-12;

// Conditional distribution of row i at inverse bandwidth beta; returns the
// perplexity. probs has length n with probs[i] forced to zero.
double row_at_beta(const std::vector<double>& sqd, size_t i, size_t n,
                   double beta, std::vector<double>& probs) {
  double mn = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < n; ++j)
    if (j != i) mn = std::min(mn, sqd[j]);
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    if (j == i) {
      probs[j] = 0.0;
      continue;
    }
    probs[j] = std::exp(-beta * (sqd[j] - mn));
    sum += probs[j];
  }
  double entropy = 0.0;  // in nats
  for (size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    probs[j] /= sum;
    if (probs[j] > kProbFloor) entropy -= probs[j] * std::log(probs[j]);
  }
  return std::exp(entropy);
}

// Bisection on beta until the row perplexity matches within 1e-4.
void match_perplexity(const std::vector<double>& sqd, size_t i, size_t n,
                      double target, std::vector<double>& probs,
                      double* perp_out) {
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  double perp = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    perp = row_at_beta(sqd, i, n, beta, probs);
    if (std::fabs(perp - target) < 1e-4) break;
    if (perp > target) {  // too flat: sharpen
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = 0.5 * (beta + lo);
    }
  }
  if (perp_out) *perp_out = perp;
}

}  // namespace

std::vector<double> tsne_conditional_row(const std::vector<double>& sqdist_row,
                                         size_t i, double perplexity,
                                         double* perp_out) {
  std::vector<double> probs(sqdist_row.size());
  match_perplexity(sqdist_row, i, sqdist_row.size(), perplexity, probs,
                   perp_out);
  return probs;
}

TsneResult tsne_embed(const std::vector<double>& points, size_t n, size_t d,
                      const TsneConfig& cfg) {
  if (n * d != points.size())
    throw ShapeError("tsne: points size does not match n x d");
  if (static_cast<double>(n) < 3.0 * cfg.perplexity)
    throw ConfigError("tsne: need n >= 3 * perplexity (n=" +
                      std::to_string(n) + ")");

  std::vector<double> x = points;
  Rng rng(cfg.seed, "tsne");

  // Pairwise squared distances; duplicates get a deterministic jitter so
  // the conditional distributions stay defined.
  std::vector<double> sqd(n * n, 0.0);
  auto fill_sqd = [&] {
    parallel_for(n, [&](size_t i) {
      for (size_t j = 0; j < n; ++j)
        sqd[i * n + j] =
            kernels::active().sqdist(x.data() + i * d, x.data() + j * d, d);
    });
  };
  fill_sqd();
  bool dup = false;
  for (size_t i = 0; i < n && !dup; ++i)
    for (size_t j = i + 1; j < n; ++j)
      if (sqd[i * n + j] == 0.0) {
        dup = true;
        break;
      }
  if (dup) {
    for (auto& v : x) v += 1e-9 * rng.normal();
    fill_sqd();
  }

  // Symmetrized affinities with matched per-row perplexity.
  std::vector<double> p(n * n, 0.0);
  {
    std::vector<double> probs(n), row(n);
    for (size_t i = 0; i < n; ++i) {
      std::copy(sqd.begin() + i * n, sqd.begin() + (i + 1) * n, row.begin());
      match_perplexity(row, i, n, cfg.perplexity, probs, nullptr);
      for (size_t j = 0; j < n; ++j) p[i * n + j] = probs[j];
    }
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double v = (p[i * n + j] + p[j * n + i]) / (2.0 * n);
      p[i * n + j] = p[j * n + i] = std::max(v, kProbFloor);
    }
  for (size_t i = 0; i < n; ++i) p[i * n + i] = 0.0;

  // Low-dimensional init ~ N(0, 1e-4).
  std::vector<double> y(n * 2);
  for (auto& v : y) v = 1e-2 * rng.normal();
  std::vector<double> vel(n * 2, 0.0), grad(n * 2, 0.0);
  std::vector<double> q(n * n, 0.0), w(n * n, 0.0);

  auto compute_q = [&] {
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        const double dy0 = y[i * 2] - y[j * 2];
        const double dy1 = y[i * 2 + 1] - y[j * 2 + 1];
        const double wij = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        w[i * n + j] = w[j * n + i] = wij;
        sum += 2.0 * wij;
      }
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j)
        q[i * n + j] = i == j ? 0.0 : std::max(w[i * n + j] / sum, kProbFloor);
  };
  auto kl_divergence = [&] {
    double kl = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double pij = p[i * n + j];
        if (pij > kProbFloor) kl += pij * std::log(pij / q[i * n + j]);
      }
    return kl;
  };

  compute_q();
  TsneResult result;
  result.initial_kl = kl_divergence();

  for (size_t iter = 0; iter < cfg.iterations; ++iter) {
    const double exag =
        iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    const double momentum =
        iter < cfg.momentum_switch ? cfg.momentum_start : cfg.momentum_final;
    compute_q();
    std::fill(grad.begin(), grad.end(), 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double coef =
            4.0 * (exag * p[i * n + j] - q[i * n + j]) * w[i * n + j];
        grad[i * 2] += coef * (y[i * 2] - y[j * 2]);
        grad[i * 2 + 1] += coef * (y[i * 2 + 1] - y[j * 2 + 1]);
      }
    for (size_t k = 0; k < n * 2; ++k) {
      vel[k] = momentum * vel[k] - cfg.learning_rate * grad[k];
      y[k] += vel[k];
    }
    // Keep the embedding centered; KL is translation invariant.
    double c0 = 0.0, c1 = 0.0;
    for (size_t i = 0; i < n; ++i) {
      c0 += y[i * 2];
      c1 += y[i * 2 + 1];
    }
    c0 /= n;
    c1 /= n;
    for (size_t i = 0; i < n; ++i) {
      y[i * 2] -= c0;
      y[i * 2 + 1] -= c1;
    }
  }

  compute_q();
  result.final_kl = kl_divergence();
  result.coords = std::move(y);
  return result;
}

}  // namespace fhvae
