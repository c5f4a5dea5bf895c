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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fhvae/gaussian.hpp"
#include "fhvae/rng.hpp"

using namespace fhvae;

namespace {

DiagGaussian gauss1(double mean, double var) {
  return make_diag_gaussian(Tensor::scalar(mean), Tensor::scalar(var));
}

// Scalar-math reference density, independent of the tensor engine.
double ref_log_pdf(const std::vector<double>& m, const std::vector<double>& v,
                   const std::vector<double>& x) {
  double acc = 0.0;
  for (size_t i = 0; i < m.size(); ++i)
    acc += -0.5 * std::log(2.0 * M_PI * v[i]) -
           (x[i] - m[i]) * (x[i] - m[i]) / (2.0 * v[i]);
  return acc;
}

}  // namespace

TEST_CASE("log_pdf closed forms") {
  Graph g;
  CHECK(gauss::log_pdf(g, gauss1(0, 1), Tensor::scalar(0)).item() ==
        doctest::Approx(-0.918939).epsilon(1e-6));
  CHECK(gauss::log_pdf(g, gauss1(0.4, 0.25), Tensor::scalar(0.4)).item() ==
        doctest::Approx(-0.225791).epsilon(1e-6));
  DiagGaussian std2 = make_diag_gaussian(Tensor::zeros({2}),
                                         Tensor::full({2}, 1.0));
  CHECK(gauss::log_pdf(g, std2, Tensor::zeros({2})).item() ==
        doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK_THROWS_AS(gauss::log_pdf(g, std2, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("kl closed forms") {
  Graph g;
  // q == p
  DiagGaussian q = make_diag_gaussian(Tensor::from_data({2}, {0.3, -1.2}),
                                      Tensor::from_data({2}, {0.5, 2.0}));
  CHECK(gauss::kl(g, q, q).item() == doctest::Approx(0.0).epsilon(1e-12));

  // KL(N(mu,1) || N(0,1)) = ||mu||^2 / 2
  DiagGaussian qm = make_diag_gaussian(Tensor::full({2}, 1.0),
                                       Tensor::full({2}, 1.0));
  DiagGaussian p = make_diag_gaussian(Tensor::zeros({2}),
                                      Tensor::full({2}, 1.0));
  CHECK(gauss::kl(g, qm, p).item() == doctest::Approx(1.0).epsilon(1e-12));

  // KL(N(0,1) || N(0,0.25)) = (ln 0.25 + 4 - 1)/2
  CHECK(gauss::kl(g, gauss1(0, 1), gauss1(0, 0.25)).item() ==
        doctest::Approx(0.806853).epsilon(1e-6));

  CHECK_THROWS_AS(gauss::kl(g, qm, gauss1(0, 1)), ShapeError);
}

TEST_CASE("kl is non-negative and zero only at identity") {
  Rng rng(88);
  Graph g;
  for (int t = 0; t < 200; ++t) {
    const size_t d = 1 + rng.uniform_below(6);
    auto mk = [&] {
      Tensor m = Tensor::zeros({d});
      Tensor v = Tensor::zeros({d});
      for (auto& x : m.data_mut()) x = 3.0 * rng.normal();
      for (auto& x : v.data_mut()) x = std::exp(rng.normal());
      return make_diag_gaussian(m, v);
    };
    DiagGaussian q = mk(), p = mk();
    CHECK(gauss::kl(g, q, p).item() >= 0.0);
    CHECK(std::fabs(gauss::kl(g, q, q).item()) < 1e-12);
  }
}

TEST_CASE("kl matches Monte-Carlo E_q[log q - log p]") {
  Rng rng(4242);
  const size_t d = 3;
  std::vector<double> qm = {0.5, -0.2, 1.0}, qv = {0.8, 1.5, 0.3};
  std::vector<double> pm = {0.0, 0.3, 0.7}, pv = {1.0, 0.6, 0.9};
  Graph g;
  DiagGaussian q = make_diag_gaussian(Tensor::from_data({d}, qm),
                                      Tensor::from_data({d}, qv));
  DiagGaussian p = make_diag_gaussian(Tensor::from_data({d}, pm),
                                      Tensor::from_data({d}, pv));
  const double closed = gauss::kl(g, q, p).item();

  const size_t n = 100000;
  double sum = 0.0, sumsq = 0.0;
  std::vector<double> z(d);
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < d; ++k)
      z[k] = qm[k] + std::sqrt(qv[k]) * rng.normal();
    const double v = ref_log_pdf(qm, qv, z) - ref_log_pdf(pm, pv, z);
    sum += v;
    sumsq += v * v;
  }
  const double mc = sum / n;
  const double se = std::sqrt((sumsq / n - mc * mc) / n);
  CHECK(std::fabs(closed - mc) < 3.0 * se);
}

TEST_CASE("reparam_sample") {
  Graph g;
  DiagGaussian gsn = make_diag_gaussian(Tensor::from_data({2}, {1.0, -2.0}),
                                        Tensor::from_data({2}, {4.0, 0.25}));
  // eps = 0 -> mean exactly
  Tensor s0 = gauss::reparam_sample(g, gsn, Tensor::zeros({2}));
  CHECK(s0.data()[0] == 1.0);
  CHECK(s0.data()[1] == -2.0);

  // eps = 1, mean 0, var 4 -> 2
  DiagGaussian g04 = gauss1(0.0, 4.0);
  CHECK(gauss::reparam_sample(g, g04, Tensor::scalar(1.0)).item() == 2.0);

  // gradients flow to mean/var, never eps
  Tensor mean = Tensor::scalar(0.3, true);
  Tensor var = Tensor::scalar(0.7, true);
  Tensor eps = Tensor::scalar(0.9, false);
  Graph g2;
  Tensor s = gauss::reparam_sample(g2, make_diag_gaussian(mean, var), eps);
  g2.backward(s);
  CHECK(mean.grad()[0] == 1.0);
  CHECK(var.grad()[0] == doctest::Approx(0.9 * 0.5 / std::sqrt(0.7)));
  CHECK(!eps.has_grad());
}

TEST_CASE("reparam samples match target moments over 1e5 draws") {
  Rng rng(31);
  const double m = 0.7, v = 2.3;
  Graph g;
  g.recording = false;
  DiagGaussian gsn = gauss1(m, v);
  const size_t n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double s =
        gauss::reparam_sample(g, gsn, Tensor::scalar(rng.normal())).item();
    sum += s;
    sumsq += s * s;
  }
  const double mean_hat = sum / n;
  const double var_hat = sumsq / n - mean_hat * mean_hat;
  const double se_mean = std::sqrt(v / n);
  const double se_var = v * std::sqrt(2.0 / (n - 1));
  CHECK(std::fabs(mean_hat - m) < 3.0 * se_mean);
  CHECK(std::fabs(var_hat - v) < 3.0 * se_var);
}

TEST_CASE("log_pdf integrates to one (1-D quadrature over 10 sigma)") {
  const double m = 0.4, v = 0.6, sigma = std::sqrt(v);
  Graph g;
  g.recording = false;
  DiagGaussian gsn = gauss1(m, v);
  // Simpson's rule across [m - 5s, m + 5s].
  const size_t n = 4000;  // even
  const double lo = m - 5.0 * sigma, hi = m + 5.0 * sigma;
  const double h = (hi - lo) / n;
  long double acc = 0.0L;
  for (size_t i = 0; i <= n; ++i) {
    const double x = lo + h * i;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * std::exp(gauss::log_pdf(g, gsn, Tensor::scalar(x)).item());
  }
  acc *= h / 3.0L;
  CHECK(std::fabs((double)acc - 1.0) < 1e-6);
}

TEST_CASE("gaussian ops are differentiable") {
  Rng rng(9);
  auto make_point = [&](size_t d) {
    std::vector<Tensor> p;
    for (int i = 0; i < 3; ++i) {
      Tensor t = Tensor::zeros({d}, true);
      for (auto& x : t.data_mut()) x = rng.normal();
      p.push_back(t);
    }
    // index 1 plays the variance: keep it positive and away from zero.
    for (auto& x : p[1].data_mut()) x = 0.5 + std::fabs(x);
    return p;
  };
  {
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      return gauss::log_pdf(g, {p[0], p[1]}, p[2]);
    };
    CHECK(gradient_check(f, make_point(4)).max_rel_err < 1e-6);
  }
  {
    auto point = make_point(4);
    auto pv = Tensor::from_data({4}, {0.9, 1.1, 0.7, 1.3});
    auto pm = Tensor::from_data({4}, {0.1, -0.2, 0.0, 0.4});
    auto f = [&](Graph& g, std::vector<Tensor>& p) {
      return gauss::kl(g, {p[0], p[1]}, {pm, pv});
    };
    CHECK(gradient_check(f, point).max_rel_err < 1e-6);
  }
}

TEST_CASE("row-batched variants equal per-row composition") {
  Rng rng(55);
  const size_t B = 3, d = 4;
  auto mat = [&](bool positive) {
    Tensor t = Tensor::zeros({B, d});
    for (auto& x : t.data_mut())
      x = positive ? 0.4 + rng.uniform() : rng.normal();
    return t;
  };
  Tensor qm = mat(false), qv = mat(true), x = mat(false);
  Tensor pm = mat(false), pv = mat(true);
  Graph g;
  Tensor lp = gauss::log_pdf_rows(g, qm, qv, x);
  Tensor klr = gauss::kl_rows(g, qm, qv, pm, pv);
  for (size_t r = 0; r < B; ++r) {
    auto rowvec = [&](const Tensor& t) {
      return Tensor::from_data(
          {d}, std::vector<double>(t.data().begin() + r * d,
                                   t.data().begin() + (r + 1) * d));
    };
    DiagGaussian q = make_diag_gaussian(rowvec(qm), rowvec(qv));
    DiagGaussian p = make_diag_gaussian(rowvec(pm), rowvec(pv));
    CHECK(lp.data()[r] ==
          doctest::Approx(gauss::log_pdf(g, q, rowvec(x)).item())
              .epsilon(1e-12));
    CHECK(klr.data()[r] ==
          doctest::Approx(gauss::kl(g, q, p).item()).epsilon(1e-12));
  }

  // Shared rank-1 prior broadcast: same value per row.
  Tensor pm1 = Tensor::from_data({d}, {0.2, -0.1, 0.0, 0.5});
  Tensor pv1 = Tensor::full({d}, 0.25);
  Tensor kshared = gauss::kl_rows(g, qm, qv, pm1, pv1);
  for (size_t r = 0; r < B; ++r) {
    auto rowvec = [&](const Tensor& t) {
      return Tensor::from_data(
          {d}, std::vector<double>(t.data().begin() + r * d,
                                   t.data().begin() + (r + 1) * d));
    };
    DiagGaussian q = make_diag_gaussian(rowvec(qm), rowvec(qv));
    DiagGaussian p = make_diag_gaussian(pm1, pv1);
    CHECK(kshared.data()[r] ==
          doctest::Approx(gauss::kl(g, q, p).item()).epsilon(1e-12));
  }
}

TEST_CASE("variance positivity is enforced") {
  CHECK_THROWS_AS(gauss1(0.0, 0.0), DomainError);
  CHECK_THROWS_AS(gauss1(0.0, -0.5), DomainError);
  Graph g;
  // Encoder-head construction keeps any logvar positive after flooring.
  DiagGaussian d = gaussian_from_logvar(g, Tensor::scalar(0.0),
                                        Tensor::scalar(-800.0), 1e-6);
  CHECK(d.var.item() >= 1e-6);
  PriorConfig pc;
  CHECK(pc.sigma_sq_z2 == 0.25);
}
