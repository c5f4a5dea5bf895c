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

#include "fhvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fhvae/kernels.hpp"
#include "fhvae/util.hpp"

namespace fhvae {

using detail::TensorImpl;

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in tensor shape");
    n *= e;
  }
  return n;
}

std::string shape_to_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::vector<double>& ensure_grad(TensorImpl* t) {
  if (t->grad.empty()) t->grad.assign(t->value.size(), 0.0);
  return t->grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  Tensor t;
  const size_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->value.assign(n, 0.0);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->grad.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<size_t> shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
  return t;
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  const size_t n = shape_numel(shape);
  if (n != data.size())
    throw ShapeError("from_data: shape " + shape_to_str(shape) + " wants " +
                     std::to_string(n) + " values, got " +
                     std::to_string(data.size()));
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->value = std::move(data);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->grad.assign(n, 0.0);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty())
    throw Error("tensor has no gradient (backward not run or not required)");
  return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
  ensure_grad(impl_.get());
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  else if (impl_->requires_grad)
    impl_->grad.assign(impl_->value.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + shape_str());
  return impl_->value[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  *t.impl_ = *impl_;
  return t;
}

std::string Tensor::shape_str() const { return shape_to_str(impl_->shape); }

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

void Graph::backward(const Tensor& root) {
  if (consumed_)
    throw Error(
        "backward() called on a consumed graph; reset() and rebuild the "
        "forward pass first");
  if (root.numel() != 1)
    throw ShapeError("backward() root must be one element, got shape " +
                     root.shape_str());
  ensure_grad(root.impl());
  root.impl()->grad[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) it->adjoint();
  tape_.clear();
  consumed_ = true;
}

void Graph::reset() {
  tape_.clear();
  consumed_ = false;
}

void Graph::record(const char* name, std::function<void()> adjoint) {
  tape_.push_back({name, std::move(adjoint)});
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace ops {

namespace {

namespace kn = fhvae::kernels;

using Impl = std::shared_ptr<TensorImpl>;

bool taping(const Graph& g, std::initializer_list<const Tensor*> inputs) {
  if (!g.recording) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_out(std::vector<size_t> shape) {
  return Tensor::zeros(std::move(shape), false);
}

void mark(Tensor& out) { out.impl()->requires_grad = true; }

// Downstream gradient of an op output; nullptr when the output never fed the
// loss (its adjoint contribution is zero).
const std::vector<double>* out_grad(const Impl& out) {
  return out->grad.empty() ? nullptr : &out->grad;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

enum class Broadcast { kNone, kScalar, kRow };

Broadcast binary_broadcast(const char* op, const Tensor& a, const Tensor& b,
                           bool allow_row) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (allow_row && a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1))
    return Broadcast::kRow;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() +
                   " vs " + b.shape_str() +
                   " (broadcast is limited to scalars and row biases)");
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " + a.shape_str() +
                     " and " + b.shape_str());
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() +
                     " vs " + b.shape_str());
  Tensor out = make_out({m, n});
  kn::active().gemm_nn(m, k, n, a.data().data(), b.data().data(),
                       out.data_mut().data());
  if (taping(g, {&a, &b})) {
    mark(out);
    Impl ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    g.record("matmul", [ia, ib, io, m, k, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      if (ia->requires_grad)
        kn::active().gemm_nt(m, n, k, go->data(), ib->value.data(),
                             ensure_grad(ia.get()).data());
      if (ib->requires_grad)
        kn::active().gemm_tn(k, m, n, ia->value.data(), go->data(),
                             ensure_grad(ib.get()).data());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add / sub / mul / div
// ---------------------------------------------------------------------------

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast("add", a, b, /*allow_row=*/true);
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  double* o = out.data_mut().data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  switch (bc) {
    case Broadcast::kNone:
      kn::active().add(pa, pb, o, n);
      break;
    case Broadcast::kScalar: {
      const double c = pb[0];
      for (size_t i = 0; i < n; ++i) o[i] = pa[i] + c;
      break;
    }
    case Broadcast::kRow: {
      const size_t rows = a.dim(0), cols = a.dim(1);
      for (size_t r = 0; r < rows; ++r)
        kn::active().add(pa + r * cols, pb, o + r * cols, cols);
      break;
    }
  }
  if (taping(g, {&a, &b})) {
    mark(out);
    Impl ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    g.record("add", [ia, ib, io, bc, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      if (ia->requires_grad)
        kn::active().axpy(1.0, go->data(), ensure_grad(ia.get()).data(), n);
      if (ib->requires_grad) {
        auto& gb = ensure_grad(ib.get());
        if (bc == Broadcast::kNone) {
          kn::active().axpy(1.0, go->data(), gb.data(), n);
        } else if (bc == Broadcast::kScalar) {
          gb[0] += kn::active().sum(go->data(), n);
        } else {
          const size_t cols = gb.size(), rows = n / cols;
          for (size_t r = 0; r < rows; ++r)
            kn::active().axpy(1.0, go->data() + r * cols, gb.data(), cols);
        }
      }
    });
  }
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast("sub", a, b, /*allow_row=*/true);
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  double* o = out.data_mut().data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  switch (bc) {
    case Broadcast::kNone:
      kn::active().sub(pa, pb, o, n);
      break;
    case Broadcast::kScalar: {
      const double c = pb[0];
      for (size_t i = 0; i < n; ++i) o[i] = pa[i] - c;
      break;
    }
    case Broadcast::kRow: {
      const size_t rows = a.dim(0), cols = a.dim(1);
      for (size_t r = 0; r < rows; ++r)
        kn::active().sub(pa + r * cols, pb, o + r * cols, cols);
      break;
    }
  }
  if (taping(g, {&a, &b})) {
    mark(out);
    Impl ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    g.record("sub", [ia, ib, io, bc, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      if (ia->requires_grad)
        kn::active().axpy(1.0, go->data(), ensure_grad(ia.get()).data(), n);
      if (ib->requires_grad) {
        auto& gb = ensure_grad(ib.get());
        if (bc == Broadcast::kNone) {
          kn::active().axpy(-1.0, go->data(), gb.data(), n);
        } else if (bc == Broadcast::kScalar) {
          gb[0] -= kn::active().sum(go->data(), n);
        } else {
          const size_t cols = gb.size(), rows = n / cols;
          for (size_t r = 0; r < rows; ++r)
            kn::active().axpy(-1.0, go->data() + r * cols, gb.data(), cols);
        }
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast("mul", a, b, /*allow_row=*/false);
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  if (bc == Broadcast::kNone)
    kn::active().mul(a.data().data(), b.data().data(), out.data_mut().data(),
                     n);
  else
    kn::active().scale(a.data().data(), b.data()[0], out.data_mut().data(), n);
  if (taping(g, {&a, &b})) {
    mark(out);
    Impl ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    g.record("mul", [ia, ib, io, bc, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      if (bc == Broadcast::kNone) {
        if (ia->requires_grad)
          kn::active().fmacc(go->data(), ib->value.data(),
                             ensure_grad(ia.get()).data(), n);
        if (ib->requires_grad)
          kn::active().fmacc(go->data(), ia->value.data(),
                             ensure_grad(ib.get()).data(), n);
      } else {
        if (ia->requires_grad)
          kn::active().axpy(ib->value[0], go->data(),
                            ensure_grad(ia.get()).data(), n);
        if (ib->requires_grad)
          ensure_grad(ib.get())[0] +=
              kn::active().dot(go->data(), ia->value.data(), n);
      }
    });
  }
  return out;
}

Tensor div(Graph& g, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast("div", a, b, /*allow_row=*/false);
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  if (bc == Broadcast::kNone)
    kn::active().div(a.data().data(), b.data().data(), out.data_mut().data(),
                     n);
  else
    kn::active().scale(a.data().data(), 1.0 / b.data()[0],
                       out.data_mut().data(), n);
  if (taping(g, {&a, &b})) {
    mark(out);
    Impl ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    g.record("div", [ia, ib, io, bc, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      const double* gd = go->data();
      if (bc == Broadcast::kNone) {
        if (ia->requires_grad) {
          auto& ga = ensure_grad(ia.get());
          for (size_t i = 0; i < n; ++i) ga[i] += gd[i] / ib->value[i];
        }
        if (ib->requires_grad) {
          auto& gb = ensure_grad(ib.get());
          for (size_t i = 0; i < n; ++i)
            gb[i] -= gd[i] * io->value[i] / ib->value[i];
        }
      } else {
        const double bv = ib->value[0];
        if (ia->requires_grad)
          kn::active().axpy(1.0 / bv, gd, ensure_grad(ia.get()).data(), n);
        if (ib->requires_grad)
          ensure_grad(ib.get())[0] -=
              kn::active().dot(gd, io->value.data(), n) / bv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(Graph& g, const Tensor& a, const char* name, Fwd fwd,
                Bwd bwd) {
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  fwd(a.data().data(), out.data_mut().data(), n);
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    g.record(name, [ia, io, bwd, n] {
      const auto* go = out_grad(io);
      if (!go || !ia->requires_grad) return;
      bwd(go->data(), ia->value.data(), io->value.data(),
          ensure_grad(ia.get()).data(), n);
    });
  }
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Tensor tanh(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "tanh",
      [](const double* x, double* o, size_t n) {
        for (size_t i = 0; i < n; ++i) o[i] = std::tanh(x[i]);
      },
      [](const double* go, const double*, const double* y, double* gx,
         size_t n) {
        for (size_t i = 0; i < n; ++i) gx[i] += go[i] * (1.0 - y[i] * y[i]);
      });
}

Tensor sigmoid(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "sigmoid",
      [](const double* x, double* o, size_t n) {
        for (size_t i = 0; i < n; ++i) o[i] = stable_sigmoid(x[i]);
      },
      [](const double* go, const double*, const double* y, double* gx,
         size_t n) {
        for (size_t i = 0; i < n; ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
      });
}

Tensor exp(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "exp",
      [](const double* x, double* o, size_t n) {
        for (size_t i = 0; i < n; ++i) o[i] = std::exp(x[i]);
      },
      [](const double* go, const double*, const double* y, double* gx,
         size_t n) {
        for (size_t i = 0; i < n; ++i) gx[i] += go[i] * y[i];
      });
}

Tensor log(Graph& g, const Tensor& a) {
  for (size_t i = 0; i < a.numel(); ++i)
    if (!(a.data()[i] > 0.0))
      throw DomainError("log: input element " + std::to_string(i) + " is " +
                        std::to_string(a.data()[i]) +
                        ", log requires strictly positive values");
  return unary_op(
      g, a, "log",
      [](const double* x, double* o, size_t n) {
        for (size_t i = 0; i < n; ++i) o[i] = std::log(x[i]);
      },
      [](const double* go, const double* x, const double*, double* gx,
         size_t n) {
        for (size_t i = 0; i < n; ++i) gx[i] += go[i] / x[i];
      });
}

Tensor softplus(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "softplus",
      [](const double* x, double* o, size_t n) {
        for (size_t i = 0; i < n; ++i) o[i] = stable_softplus(x[i]);
      },
      [](const double* go, const double* x, const double*, double* gx,
         size_t n) {
        for (size_t i = 0; i < n; ++i) gx[i] += go[i] * stable_sigmoid(x[i]);
      });
}

Tensor sqrt(Graph& g, const Tensor& a) {
  for (size_t i = 0; i < a.numel(); ++i)
    if (!(a.data()[i] >= 0.0))
      throw DomainError("sqrt: negative input element " + std::to_string(i));
  return unary_op(
      g, a, "sqrt",
      [](const double* x, double* o, size_t n) { kn::active().vsqrt(x, o, n); },
      [](const double* go, const double*, const double* y, double* gx,
         size_t n) {
        for (size_t i = 0; i < n; ++i) gx[i] += go[i] * 0.5 / y[i];
      });
}

Tensor negate(Graph& g, const Tensor& a) { return scale(g, a, -1.0); }

Tensor scale(Graph& g, const Tensor& a, double c) {
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  kn::active().scale(a.data().data(), c, out.data_mut().data(), n);
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    g.record("scale", [ia, io, c, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      kn::active().axpy(c, go->data(), ensure_grad(ia.get()).data(), n);
    });
  }
  return out;
}

Tensor add_scalar(Graph& g, const Tensor& a, double c) {
  const size_t n = a.numel();
  Tensor out = make_out(a.shape());
  const double* pa = a.data().data();
  double* o = out.data_mut().data();
  for (size_t i = 0; i < n; ++i) o[i] = pa[i] + c;
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    g.record("add_scalar", [ia, io, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      kn::active().axpy(1.0, go->data(), ensure_grad(ia.get()).data(), n);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

void check_axis(const char* op, const Tensor& a, int axis) {
  if (a.numel() == 0) throw ShapeError(std::string(op) + ": empty tensor");
  if (axis == -1) return;
  if (axis < 0 || static_cast<size_t>(axis) >= a.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + a.shape_str());
  if (a.rank() > 2)
    throw ShapeError(std::string(op) + ": axis reduction supports rank <= 2");
}

std::vector<size_t> reduced_shape(const Tensor& a, int axis) {
  if (axis == -1 || a.rank() == 1) return {1};
  return {a.dim(axis == 0 ? 1 : 0)};
}

}  // namespace

Tensor sum(Graph& g, const Tensor& a, int axis) {
  check_axis("sum", a, axis);
  const bool full = axis == -1 || a.rank() == 1;
  Tensor out = make_out(reduced_shape(a, axis));
  double* o = out.data_mut().data();
  const double* pa = a.data().data();
  const size_t n = a.numel();
  if (full) {
    o[0] = kn::active().sum(pa, n);
  } else {
    const size_t rows = a.dim(0), cols = a.dim(1);
    if (axis == 1) {
      for (size_t r = 0; r < rows; ++r)
        o[r] = kn::active().sum(pa + r * cols, cols);
    } else {
      std::fill(o, o + cols, 0.0);
      for (size_t r = 0; r < rows; ++r)
        kn::active().axpy(1.0, pa + r * cols, o, cols);
    }
  }
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    const size_t rows = a.rank() == 2 ? a.dim(0) : 1;
    const size_t cols = a.rank() == 2 ? a.dim(1) : n;
    g.record("sum", [ia, io, full, axis, rows, cols, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      auto& ga = ensure_grad(ia.get());
      if (full) {
        const double gv = (*go)[0];
        for (size_t i = 0; i < n; ++i) ga[i] += gv;
      } else if (axis == 1) {
        for (size_t r = 0; r < rows; ++r) {
          const double gv = (*go)[r];
          for (size_t c = 0; c < cols; ++c) ga[r * cols + c] += gv;
        }
      } else {
        for (size_t r = 0; r < rows; ++r)
          kn::active().axpy(1.0, go->data(), ga.data() + r * cols, cols);
      }
    });
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& a, int axis) {
  check_axis("mean", a, axis);
  const bool full = axis == -1 || a.rank() == 1;
  const size_t count =
      full ? a.numel() : (axis == 1 ? a.dim(1) : a.dim(0));
  Tensor s = sum(g, a, axis);
  return scale(g, s, 1.0 / static_cast<double>(count));
}

Tensor logsumexp(Graph& g, const Tensor& a, int axis) {
  check_axis("logsumexp", a, axis);
  const bool full = axis == -1 || a.rank() == 1;
  Tensor out = make_out(reduced_shape(a, axis));
  double* o = out.data_mut().data();
  const double* pa = a.data().data();
  const size_t n = a.numel();
  // Max-shift for stability: lse(x) = max + log sum exp(x - max).
  auto lse_span = [](const double* x, size_t len) {
    const double m = kn::active().vmax(x, len);
    double acc = 0.0;
    for (size_t i = 0; i < len; ++i) acc += std::exp(x[i] - m);
    return m + std::log(acc);
  };
  size_t rows = 1, cols = n;
  if (!full) {
    rows = a.dim(0);
    cols = a.dim(1);
  }
  if (full) {
    o[0] = lse_span(pa, n);
  } else if (axis == 1) {
    for (size_t r = 0; r < rows; ++r) o[r] = lse_span(pa + r * cols, cols);
  } else {
    // Column-wise: gather each column into a scratch buffer.
    std::vector<double> col(rows);
    for (size_t c = 0; c < cols; ++c) {
      for (size_t r = 0; r < rows; ++r) col[r] = pa[r * cols + c];
      o[c] = lse_span(col.data(), rows);
    }
  }
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    g.record("logsumexp", [ia, io, full, axis, rows, cols, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      auto& ga = ensure_grad(ia.get());
      const double* x = ia->value.data();
      const double* y = io->value.data();
      // d lse / dx_i = softmax_i = exp(x_i - lse)
      if (full) {
        const double gv = (*go)[0];
        for (size_t i = 0; i < n; ++i) ga[i] += gv * std::exp(x[i] - y[0]);
      } else if (axis == 1) {
        for (size_t r = 0; r < rows; ++r) {
          const double gv = (*go)[r];
          for (size_t c = 0; c < cols; ++c)
            ga[r * cols + c] += gv * std::exp(x[r * cols + c] - y[r]);
        }
      } else {
        for (size_t c = 0; c < cols; ++c) {
          const double gv = (*go)[c];
          for (size_t r = 0; r < rows; ++r)
            ga[r * cols + c] += gv * std::exp(x[r * cols + c] - y[c]);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat / slice / reshape
// ---------------------------------------------------------------------------

Tensor concat(Graph& g, const std::vector<Tensor>& ts, int axis) {
  if (ts.empty()) throw ShapeError("concat: no inputs");
  const size_t rank = ts[0].rank();
  if (rank == 0 || rank > 2) throw ShapeError("concat: supports rank 1 or 2");
  if (axis < 0 || static_cast<size_t>(axis) >= rank)
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  for (const Tensor& t : ts) {
    if (t.rank() != rank)
      throw ShapeError("concat: mixed ranks");
    for (size_t d = 0; d < rank; ++d)
      if (static_cast<int>(d) != axis && t.dim(d) != ts[0].dim(d))
        throw ShapeError("concat: non-concat dimension mismatch " +
                         t.shape_str() + " vs " + ts[0].shape_str());
  }
  std::vector<size_t> shape = ts[0].shape();
  size_t total = 0;
  for (const Tensor& t : ts) total += t.dim(static_cast<size_t>(axis));
  shape[static_cast<size_t>(axis)] = total;
  Tensor out = make_out(shape);
  double* o = out.data_mut().data();

  // Copy geometry: both rank-1/axis-0 and rank-2 cases reduce to per-row
  // segment copies.
  const size_t rows = (rank == 2 && axis == 1) ? shape[0] : 1;
  if (rank == 1 || axis == 0) {
    size_t off = 0;
    for (const Tensor& t : ts) {
      std::memcpy(o + off, t.data().data(), t.numel() * sizeof(double));
      off += t.numel();
    }
  } else {
    const size_t out_cols = shape[1];
    size_t col_off = 0;
    for (const Tensor& t : ts) {
      const size_t cols = t.dim(1);
      for (size_t r = 0; r < rows; ++r)
        std::memcpy(o + r * out_cols + col_off, t.data().data() + r * cols,
                    cols * sizeof(double));
      col_off += cols;
    }
  }

  bool any_grad = false;
  for (const Tensor& t : ts)
    if (t.requires_grad()) any_grad = true;
  if (g.recording && any_grad) {
    mark(out);
    std::vector<Impl> impls;
    impls.reserve(ts.size());
    for (const Tensor& t : ts) impls.push_back(t.impl_ptr());
    Impl io = out.impl_ptr();
    const bool cols_axis = (rank == 2 && axis == 1);
    const size_t out_cols = shape.size() == 2 ? shape[1] : shape[0];
    g.record("concat", [impls, io, cols_axis, rows, out_cols] {
      const auto* go = out_grad(io);
      if (!go) return;
      if (!cols_axis) {
        size_t off = 0;
        for (const Impl& it : impls) {
          const size_t len = it->value.size();
          if (it->requires_grad)
            kn::active().axpy(1.0, go->data() + off,
                              ensure_grad(it.get()).data(), len);
          off += len;
        }
      } else {
        size_t col_off = 0;
        for (const Impl& it : impls) {
          const size_t cols = it->value.size() / rows;
          if (it->requires_grad) {
            auto& gi = ensure_grad(it.get());
            for (size_t r = 0; r < rows; ++r)
              kn::active().axpy(1.0, go->data() + r * out_cols + col_off,
                                gi.data() + r * cols, cols);
          }
          col_off += cols;
        }
      }
    });
  }
  return out;
}

Tensor slice(Graph& g, const Tensor& a, int axis, size_t start, size_t len) {
  const size_t rank = a.rank();
  if (rank == 0 || rank > 2) throw ShapeError("slice: supports rank 1 or 2");
  if (axis < 0 || static_cast<size_t>(axis) >= rank)
    throw ShapeError("slice: axis out of range");
  const size_t extent = a.dim(static_cast<size_t>(axis));
  if (len == 0 || start + len > extent)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + a.shape_str());
  std::vector<size_t> shape = a.shape();
  shape[static_cast<size_t>(axis)] = len;
  Tensor out = make_out(shape);
  double* o = out.data_mut().data();
  const double* pa = a.data().data();

  const bool cols_axis = (rank == 2 && axis == 1);
  const size_t rows = cols_axis ? a.dim(0) : 1;
  const size_t a_cols = rank == 2 ? a.dim(1) : a.dim(0);
  if (!cols_axis) {
    const size_t row_len = rank == 2 ? a.dim(1) : 1;
    std::memcpy(o, pa + start * row_len, len * row_len * sizeof(double));
  } else {
    for (size_t r = 0; r < rows; ++r)
      std::memcpy(o + r * len, pa + r * a_cols + start, len * sizeof(double));
  }
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    const size_t row_len = rank == 2 ? a.dim(1) : 1;
    g.record("slice", [ia, io, cols_axis, rows, a_cols, row_len, start, len] {
      const auto* go = out_grad(io);
      if (!go) return;
      auto& ga = ensure_grad(ia.get());
      if (!cols_axis) {
        kn::active().axpy(1.0, go->data(), ga.data() + start * row_len,
                          len * row_len);
      } else {
        for (size_t r = 0; r < rows; ++r)
          kn::active().axpy(1.0, go->data() + r * len,
                            ga.data() + r * a_cols + start, len);
      }
    });
  }
  return out;
}

Tensor reshape(Graph& g, const Tensor& a, std::vector<size_t> shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + a.shape_str() + " to " +
                     shape_to_str(shape) + " changes element count");
  Tensor out = make_out(std::move(shape));
  std::memcpy(out.data_mut().data(), a.data().data(),
              a.numel() * sizeof(double));
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    const size_t n = a.numel();
    g.record("reshape", [ia, io, n] {
      const auto* go = out_grad(io);
      if (!go) return;
      kn::active().axpy(1.0, go->data(), ensure_grad(ia.get()).data(), n);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pairwise_sqdist / embed_rows / take_per_row
// ---------------------------------------------------------------------------

Tensor pairwise_sqdist(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("pairwise_sqdist: want [m x d] and [k x d], got " +
                     a.shape_str() + " and " + b.shape_str());
  const size_t m = a.dim(0), k = b.dim(0), d = a.dim(1);
  Tensor out = make_out({m, k});
  double* o = out.data_mut().data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < k; ++j)
      o[i * k + j] = kn::active().sqdist(pa + i * d, pb + j * d, d);
  if (taping(g, {&a, &b})) {
    mark(out);
    Impl ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    g.record("pairwise_sqdist", [ia, ib, io, m, k, d] {
      const auto* go = out_grad(io);
      if (!go) return;
      const double* gs = go->data();
      // dS[i,j] contributes 2 (a_i - b_j) to da_i and -2 (a_i - b_j) to db_j:
      //   dA = 2 (diag(rowsum gS) A - gS B)
      //   dB = 2 (diag(colsum gS) B - gS^T A)
      if (ia->requires_grad) {
        std::vector<double> t(m * d, 0.0);
        kn::active().gemm_nn(m, k, d, gs, ib->value.data(), t.data());
        auto& ga = ensure_grad(ia.get());
        for (size_t i = 0; i < m; ++i) {
          const double rs = kn::active().sum(gs + i * k, k);
          kn::active().axpy(2.0 * rs, ia->value.data() + i * d,
                            ga.data() + i * d, d);
          kn::active().axpy(-2.0, t.data() + i * d, ga.data() + i * d, d);
        }
      }
      if (ib->requires_grad) {
        std::vector<double> t(k * d, 0.0);
        kn::active().gemm_tn(k, m, d, gs, ia->value.data(), t.data());
        std::vector<double> cs(k, 0.0);
        for (size_t i = 0; i < m; ++i)
          kn::active().axpy(1.0, gs + i * k, cs.data(), k);
        auto& gb = ensure_grad(ib.get());
        for (size_t j = 0; j < k; ++j) {
          kn::active().axpy(2.0 * cs[j], ib->value.data() + j * d,
                            gb.data() + j * d, d);
          kn::active().axpy(-2.0, t.data() + j * d, gb.data() + j * d, d);
        }
      }
    });
  }
  return out;
}

Tensor embed_rows(Graph& g, const Tensor& table,
                  const std::vector<size_t>& idx) {
  if (table.rank() != 2)
    throw ShapeError("embed_rows: table must be rank-2, got " +
                     table.shape_str());
  const size_t k = table.dim(0), d = table.dim(1);
  for (size_t i : idx)
    if (i >= k)
      throw ShapeError("embed_rows: index " + std::to_string(i) +
                       " out of range for " + std::to_string(k) + " rows");
  const size_t b = idx.size();
  Tensor out = make_out({b, d});
  double* o = out.data_mut().data();
  const double* pt = table.data().data();
  for (size_t i = 0; i < b; ++i)
    std::memcpy(o + i * d, pt + idx[i] * d, d * sizeof(double));
  if (taping(g, {&table})) {
    mark(out);
    Impl it = table.impl_ptr(), io = out.impl_ptr();
    g.record("embed_rows", [it, io, idx, d] {
      const auto* go = out_grad(io);
      if (!go) return;
      auto& gt = ensure_grad(it.get());
      for (size_t i = 0; i < idx.size(); ++i)
        kn::active().axpy(1.0, go->data() + i * d, gt.data() + idx[i] * d, d);
    });
  }
  return out;
}

Tensor take_per_row(Graph& g, const Tensor& a,
                    const std::vector<size_t>& idx) {
  if (a.rank() != 2)
    throw ShapeError("take_per_row: expects rank-2, got " + a.shape_str());
  const size_t rows = a.dim(0), cols = a.dim(1);
  if (idx.size() != rows)
    throw ShapeError("take_per_row: need one index per row");
  for (size_t c : idx)
    if (c >= cols) throw ShapeError("take_per_row: column index out of range");
  Tensor out = make_out({rows});
  double* o = out.data_mut().data();
  const double* pa = a.data().data();
  for (size_t r = 0; r < rows; ++r) o[r] = pa[r * cols + idx[r]];
  if (taping(g, {&a})) {
    mark(out);
    Impl ia = a.impl_ptr(), io = out.impl_ptr();
    g.record("take_per_row", [ia, io, idx, cols] {
      const auto* go = out_grad(io);
      if (!go) return;
      auto& ga = ensure_grad(ia.get());
      for (size_t r = 0; r < idx.size(); ++r)
        ga[r * cols + idx[r]] += (*go)[r];
    });
  }
  return out;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// gradient_check
// ---------------------------------------------------------------------------

GradCheckReport gradient_check(
    const std::function<Tensor(Graph&, std::vector<Tensor>&)>& f,
    std::vector<Tensor> point, double step) {
  for (Tensor& t : point) t.zero_grad();

  Graph g;
  Tensor out = f(g, point);
  if (out.numel() != 1)
    throw ShapeError("gradient_check: f must return a scalar, got " +
                     out.shape_str());
  if (!std::isfinite(out.item()))
    throw NumericError("gradient_check: f is non-finite at the base point");
  g.backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(point.size());
  for (Tensor& t : point) {
    if (!t.requires_grad())
      throw Error("gradient_check: point tensor does not require gradients");
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }

  Graph ng;
  ng.recording = false;
  GradCheckReport report;
  for (size_t ti = 0; ti < point.size(); ++ti) {
    auto vals = point[ti].data_mut();
    for (size_t e = 0; e < vals.size(); ++e) {
      const double orig = vals[e];
      vals[e] = orig + step;
      const double fp = f(ng, point).item();
      vals[e] = orig - step;
      const double fm = f(ng, point).item();
      vals[e] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("gradient_check: non-finite value perturbing "
                           "tensor#" +
                           std::to_string(ti) + "[" + std::to_string(e) + "]");
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[ti][e];
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.n_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst =
            "tensor#" + std::to_string(ti) + "[" + std::to_string(e) + "]";
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization ("TNSR")
// ---------------------------------------------------------------------------

namespace {
constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
constexpr uint8_t kTensorVersion = 1;
}  // namespace

void tensor_write(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  write_u8(os, kTensorVersion);
  if (t.rank() > 255) throw ShapeError("tensor rank exceeds format limit");
  write_u8(os, static_cast<uint8_t>(t.rank()));
  for (size_t e : t.shape()) {
    if (e > UINT32_MAX) throw ShapeError("tensor extent exceeds format limit");
    write_u32le(os, static_cast<uint32_t>(e));
  }
  for (double v : t.data()) write_f64le(os, v);
}

Tensor tensor_read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw DataError("tensor stream: bad magic (want TNSR)");
  const uint8_t version = read_u8(is);
  if (version != kTensorVersion)
    throw DataError("tensor stream: unsupported version " +
                    std::to_string(version));
  const uint8_t rank = read_u8(is);
  std::vector<size_t> shape(rank);
  for (auto& e : shape) e = read_u32le(is);
  const size_t n = shape.empty() ? 1 : shape_numel(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = read_f64le(is);
  if (shape.empty()) shape = {1};
  return Tensor::from_data(std::move(shape), std::move(data));
}

void tensor_save(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for write: " + path);
  tensor_write(os, t);
  if (!os) throw DataError("write failed: " + path);
}

Tensor tensor_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  return tensor_read(is);
}

}  // namespace fhvae
