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
#include <cstring>
#include <sstream>

#include "fhvae/rng.hpp"
#include "fhvae/tensor.hpp"

using namespace fhvae;

namespace {

Tensor randn(Rng& rng, std::vector<size_t> shape, bool rg = true) {
  Tensor t = Tensor::zeros(std::move(shape), rg);
  rng.fill_normal(t.data_mut().data(), t.numel());
  return t;
}

}  // namespace

TEST_CASE("matmul identity and orthogonal cases") {
  Graph g;
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor c = ops::matmul(g, eye, a);
  CHECK(c.data()[0] == 1);
  CHECK(c.data()[1] == 2);
  CHECK(c.data()[2] == 3);
  CHECK(c.data()[3] == 4);

  Tensor u = Tensor::from_data({1, 2}, {1, 0});
  Tensor v = Tensor::from_data({2, 1}, {0, 1});
  CHECK(ops::matmul(g, u, v).item() == 0.0);

  CHECK_THROWS_AS(ops::matmul(g, a, u), ShapeError);
  try {
    ops::matmul(g, a, u);
  } catch (const ShapeError& e) {
    // The diagnostic names both shapes.
    CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    CHECK(std::string(e.what()).find("[1x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs central differences") {
  Rng rng(42);
  std::vector<Tensor> point = {randn(rng, {3, 4}), randn(rng, {4, 2})};
  auto f = [](Graph& g, std::vector<Tensor>& p) {
    return ops::sum(g, ops::tanh(g, ops::matmul(g, p[0], p[1])));
  };
  auto report = gradient_check(f, point, 1e-4);
  CHECK(report.n_checked == 20);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("elementwise closed forms") {
  Graph g;
  Tensor zero = Tensor::scalar(0.0, true);
  Tensor th = ops::tanh(g, zero);
  CHECK(th.item() == 0.0);
  g.backward(th);
  CHECK(zero.grad()[0] == 1.0);

  Graph g2;
  CHECK(ops::sigmoid(g2, Tensor::scalar(0.0)).item() == 0.5);

  // softplus against log(1+exp(x)) evaluated in extended precision.
  const double lo = ops::softplus(g2, Tensor::scalar(-30.0)).item();
  const long double ref_lo = std::log1p(std::exp((long double)-30.0));
  CHECK(lo > 0.0);
  CHECK(lo < 1e-12);
  CHECK(std::fabs(lo - (double)ref_lo) < 1e-18);
  const double hi = ops::softplus(g2, Tensor::scalar(30.0)).item();
  const long double ref_hi = std::log1p(std::exp((long double)30.0));
  CHECK(std::isfinite(hi));
  CHECK(std::fabs(hi - (double)ref_hi) < 1e-12);
  CHECK(hi == doctest::Approx(30.0).epsilon(1e-12));
}

TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(7);
  auto check = [&](const char* name, auto builder, double tol = 1e-6) {
    std::vector<Tensor> point = {randn(rng, {3, 5})};
    auto f = [&builder](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, builder(g, p[0]));
    };
    auto rep = gradient_check(f, point, 1e-4);
    INFO(name << " worst=" << rep.worst);
    CHECK(rep.max_rel_err < tol);
  };

  check("tanh", [](Graph& g, Tensor& x) { return ops::tanh(g, x); });
  check("sigmoid", [](Graph& g, Tensor& x) { return ops::sigmoid(g, x); });
  check("exp", [](Graph& g, Tensor& x) { return ops::exp(g, x); });
  check("softplus", [](Graph& g, Tensor& x) { return ops::softplus(g, x); });
  check("negate", [](Graph& g, Tensor& x) { return ops::negate(g, x); });
  check("scale", [](Graph& g, Tensor& x) { return ops::scale(g, x, -2.5); });
  check("add_scalar",
        [](Graph& g, Tensor& x) { return ops::add_scalar(g, x, 3.0); });
  check("mean", [](Graph& g, Tensor& x) { return ops::mean(g, x, 1); });
  check("sum_axis0", [](Graph& g, Tensor& x) { return ops::sum(g, x, 0); });
  check("logsumexp_axis1",
        [](Graph& g, Tensor& x) { return ops::logsumexp(g, x, 1); });
  check("logsumexp_axis0",
        [](Graph& g, Tensor& x) { return ops::logsumexp(g, x, 0); });
  check("logsumexp_full",
        [](Graph& g, Tensor& x) { return ops::logsumexp(g, x, -1); });
  check("slice",
        [](Graph& g, Tensor& x) { return ops::slice(g, x, 1, 1, 3); });
  check("reshape",
        [](Graph& g, Tensor& x) { return ops::reshape(g, x, {5, 3}); });

  // log and sqrt need positive inputs.
  {
    Tensor x = Tensor::zeros({3, 5}, true);
    for (auto& v : x.data_mut()) v = 0.2 + rng.uniform();
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::log(g, p[0]));
    };
    CHECK(gradient_check(f, {x}, 1e-5).max_rel_err < 1e-6);
    auto fs = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::sqrt(g, p[0]));
    };
    CHECK(gradient_check(fs, {x}, 1e-5).max_rel_err < 1e-6);
  }

  // Binary ops.
  {
    std::vector<Tensor> point = {randn(rng, {4, 3}), randn(rng, {4, 3})};
    auto fa = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::add(g, p[0], p[1]));
    };
    CHECK(gradient_check(fa, point).max_rel_err < 1e-6);
    auto fsub = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, ops::sub(g, p[0], p[1])));
    };
    CHECK(gradient_check(fsub, point).max_rel_err < 1e-6);
    auto fm = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::mul(g, p[0], p[1]));
    };
    CHECK(gradient_check(fm, point).max_rel_err < 1e-6);
  }
  {
    Tensor a = randn(rng, {4, 3});
    Tensor b = Tensor::zeros({4, 3}, true);
    for (auto& v : b.data_mut()) v = 1.0 + rng.uniform();
    auto fd = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::div(g, p[0], p[1]));
    };
    CHECK(gradient_check(fd, {a, b}).max_rel_err < 1e-6);
  }

  // Row-bias and scalar broadcasts.
  {
    std::vector<Tensor> point = {randn(rng, {4, 3}), randn(rng, {3}),
                                 Tensor::scalar(0.7, true)};
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      Tensor biased = ops::add(g, p[0], p[1]);
      Tensor shifted = ops::sub(g, biased, p[2]);
      return ops::sum(g, ops::tanh(g, shifted));
    };
    CHECK(gradient_check(f, point).max_rel_err < 1e-6);
  }

  // pairwise_sqdist, embed_rows, take_per_row.
  {
    std::vector<Tensor> point = {randn(rng, {4, 6}), randn(rng, {3, 6})};
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, ops::pairwise_sqdist(g, p[0], p[1])));
    };
    CHECK(gradient_check(f, point).max_rel_err < 1e-6);
  }
  {
    std::vector<Tensor> point = {randn(rng, {5, 4})};
    const std::vector<size_t> idx = {4, 0, 0, 2};
    auto f = [&idx](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, ops::embed_rows(g, p[0], idx)));
    };
    CHECK(gradient_check(f, point).max_rel_err < 1e-6);
  }
  {
    std::vector<Tensor> point = {randn(rng, {4, 3})};
    const std::vector<size_t> idx = {2, 0, 1, 1};
    auto f = [&idx](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, ops::take_per_row(g, p[0], idx)));
    };
    CHECK(gradient_check(f, point).max_rel_err < 1e-6);
  }

  // concat over both axes.
  {
    std::vector<Tensor> point = {randn(rng, {2, 3}), randn(rng, {2, 3})};
    auto f0 = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, ops::concat(g, {p[0], p[1]}, 0)));
    };
    CHECK(gradient_check(f0, point).max_rel_err < 1e-6);
    auto f1 = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, ops::concat(g, {p[0], p[1]}, 1)));
    };
    CHECK(gradient_check(f1, point).max_rel_err < 1e-6);
  }

  // matmul composed with everything above (deep chain).
  {
    std::vector<Tensor> point = {randn(rng, {3, 4}), randn(rng, {4, 5}),
                                 randn(rng, {5})};
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      Tensor h = ops::add(g, ops::matmul(g, p[0], p[1]), p[2]);
      Tensor s = ops::mul(g, ops::sigmoid(g, h), ops::tanh(g, h));
      return ops::logsumexp(g, s, -1);
    };
    CHECK(gradient_check(f, point).max_rel_err < 1e-6);
  }
}

TEST_CASE("reduce closed forms and properties") {
  Graph g;
  Tensor two = Tensor::from_data({2}, {0.0, 0.0});
  CHECK(ops::logsumexp(g, two).item() == doctest::Approx(std::log(2.0)));

  Tensor big = Tensor::from_data({2}, {1000.0, 1000.0});
  CHECK(ops::logsumexp(g, big).item() ==
        doctest::Approx(1000.0 + std::log(2.0)));

  // sum gradient is all ones.
  Tensor x = Tensor::full({3, 2}, 2.5, true);
  Graph g2;
  g2.backward(ops::sum(g2, x));
  for (double v : x.grad()) CHECK(v == 1.0);

  CHECK_THROWS_AS(ops::sum(g, x, 5), ShapeError);
}

TEST_CASE("logsumexp matches extended-precision reference over +-1000") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 1 + rng.uniform_below(12);
    Tensor x = Tensor::zeros({n});
    long double acc = 0.0L;
    std::vector<long double> vals(n);
    for (size_t i = 0; i < n; ++i) {
      const double v = rng.uniform(-1000.0, 1000.0);
      x.data_mut()[i] = v;
      vals[i] = v;
    }
    long double m = vals[0];
    for (auto v : vals) m = std::max(m, v);
    for (auto v : vals) acc += std::exp(v - m);
    const long double want = m + std::log(acc);
    Graph g;
    const double got = ops::logsumexp(g, x).item();
    CHECK(std::fabs((long double)got - want) < 1e-12L);
    // Max-shift identity: lse(x) = max + lse(x - max).
    Tensor shifted = ops::add_scalar(g, x, -(double)m);
    CHECK(std::fabs(got - ((double)m + ops::logsumexp(g, shifted).item())) <
          1e-12);
  }
}

TEST_CASE("concat and slice round-trip") {
  Graph g;
  Rng rng(3);
  Tensor a = randn(rng, {4}, false);
  Tensor b = randn(rng, {4}, false);
  Tensor cat = ops::concat(g, {a, b}, 0);
  Tensor a2 = ops::slice(g, cat, 0, 0, 4);
  Tensor b2 = ops::slice(g, cat, 0, 4, 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a2.data()[i] == a.data()[i]);
    CHECK(b2.data()[i] == b.data()[i]);
  }

  // Latent concatenation: 32 + 32 -> 64.
  Tensor z1 = randn(rng, {32}, false);
  Tensor z2 = randn(rng, {32}, false);
  CHECK(ops::concat(g, {z1, z2}, 0).dim(0) == 64);

  // Gradient of slice is zero outside the window.
  Tensor x = randn(rng, {6});
  Graph g2;
  Tensor win = ops::slice(g2, x, 0, 2, 3);
  g2.backward(ops::sum(g2, win));
  for (size_t i = 0; i < 6; ++i)
    CHECK(x.grad()[i] == ((i >= 2 && i < 5) ? 1.0 : 0.0));

  CHECK_THROWS_AS(ops::slice(g, x, 0, 4, 3), ShapeError);
}

TEST_CASE("gradient_check harness cases") {
  Rng rng(17);
  {
    std::vector<Tensor> point = {randn(rng, {6})};
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::tanh(g, p[0]));
    };
    CHECK(gradient_check(f, point, 1e-4).max_rel_err < 1e-6);
  }
  {
    // f(x) = sum(x * 0): analytic and numeric gradients both vanish.
    std::vector<Tensor> point = {randn(rng, {4})};
    auto f = [](Graph& g, std::vector<Tensor>& p) {
      return ops::sum(g, ops::scale(g, p[0], 0.0));
    };
    auto rep = gradient_check(f, point, 1e-4);
    CHECK(rep.max_rel_err == 0.0);
  }
}

TEST_CASE("second backward without rebuild is an error") {
  Graph g;
  Tensor x = Tensor::scalar(1.5, true);
  Tensor y = ops::tanh(g, x);
  g.backward(y);
  CHECK_THROWS_AS(g.backward(y), Error);
  // After reset + rebuild it works again.
  g.reset();
  x.zero_grad();
  Tensor y2 = ops::tanh(g, x);
  g.backward(y2);
  CHECK(x.grad()[0] == doctest::Approx(1.0 - std::tanh(1.5) * std::tanh(1.5)));
}

TEST_CASE("broadcasting is restricted") {
  Graph g;
  Tensor a = Tensor::zeros({4, 3});
  CHECK_THROWS_AS(ops::add(g, a, Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(ops::add(g, a, Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(ops::mul(g, a, Tensor::zeros({3})), ShapeError);
  CHECK_NOTHROW(ops::add(g, a, Tensor::zeros({3})));
  CHECK_NOTHROW(ops::mul(g, a, Tensor::scalar(2.0)));
}

TEST_CASE("log rejects non-positive inputs") {
  Graph g;
  CHECK_THROWS_AS(ops::log(g, Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(ops::log(g, Tensor::scalar(-1.0)), DomainError);
}

TEST_CASE("backward accumulates fan-out and reused operands") {
  Graph g;
  Tensor x = Tensor::scalar(0.7, true);
  // y = x*x + x  ->  dy/dx = 2x + 1
  Tensor y = ops::add(g, ops::mul(g, x, x), x);
  g.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0 * 0.7 + 1.0));
}

TEST_CASE("graph replay is deterministic bit-for-bit") {
  auto run = [](std::vector<double>* grads) {
    Rng rng(123);
    Tensor w = randn(rng, {8, 8});
    Tensor x = randn(rng, {8, 8});
    Graph g;
    Tensor h = ops::tanh(g, ops::matmul(g, x, w));
    Tensor loss = ops::logsumexp(g, ops::sum(g, h, 1), -1);
    g.backward(loss);
    grads->assign(w.grad().begin(), w.grad().end());
  };
  std::vector<double> g1, g2;
  run(&g1);
  run(&g2);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("TNSR serialization") {
  Rng rng(5);
  Tensor t = randn(rng, {3, 4}, false);
  std::stringstream ss;
  tensor_write(ss, t);

  // Golden header: magic, version, rank, extents (LE).
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 1 + 1 + 2 * 4 + 12 * 8);
  CHECK(bytes.substr(0, 4) == "TNSR");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 2);  // rank
  CHECK((uint8_t)bytes[6] == 3);
  CHECK((uint8_t)bytes[10] == 4);

  Tensor back = tensor_read(ss);
  CHECK(back.shape() == t.shape());
  for (size_t i = 0; i < t.numel(); ++i)
    CHECK(back.data()[i] == t.data()[i]);

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(tensor_read(bad), DataError);
}
