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

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fhvae/errors.hpp"

namespace fhvae {

namespace detail {

struct TensorImpl {
  std::vector<size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until needed; same length as value
  bool requires_grad = false;
};

}  // namespace detail

// Dense f64 tensor, row-major. A Tensor is a cheap handle sharing its
// storage; clone() gives an independent copy. Gradients live alongside the
// values and are populated by Graph::backward.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double v,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t rank() const { return impl_->shape.size(); }
  size_t numel() const { return impl_->value.size(); }
  size_t dim(size_t axis) const { return impl_->shape.at(axis); }

  std::span<const double> data() const { return impl_->value; }
  std::span<double> data_mut() { return impl_->value; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Value of a one-element tensor.
  double item() const;

  Tensor clone() const;

  // True when both handles share storage.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::string shape_str() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Graph;
};

// Define-by-run tape. Operations evaluate eagerly and, while `recording` is
// true and some input requires a gradient, append an adjoint closure.
// backward() replays the tape once in reverse and then frees it; calling
// backward() again without reset() is an error. A Graph must stay on one
// thread for the duration of a forward+backward pair.
class Graph {
 public:
  bool recording = true;

  // Root must be a one-element tensor. Accumulates gradients into every
  // contributing tensor that requires them; leaf gradients persist until
  // zero_grad().
  void backward(const Tensor& root);

  // Drops any recorded tape and re-arms the graph for a new forward pass.
  void reset();

  size_t tape_size() const { return tape_.size(); }
  bool consumed() const { return consumed_; }

  // Internal: used by ops to register an adjoint.
  void record(const char* name, std::function<void()> adjoint);

 private:
  struct TapeOp {
    const char* name;
    std::function<void()> adjoint;
  };
  std::vector<TapeOp> tape_;
  bool consumed_ = false;
};

namespace ops {

// Matrix product [m x k] * [k x n] -> [m x n].
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// Elementwise binary ops. Equal shapes, or `b` may be a one-element tensor
// (scalar broadcast); add/sub additionally accept a rank-1 row vector `b`
// broadcast over the rows of a rank-2 `a` (bias addition). Anything fancier
// is a ShapeError.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor div(Graph& g, const Tensor& a, const Tensor& b);

// Elementwise unary ops.
Tensor tanh(Graph& g, const Tensor& a);
Tensor sigmoid(Graph& g, const Tensor& a);
Tensor exp(Graph& g, const Tensor& a);
Tensor log(Graph& g, const Tensor& a);  // DomainError unless all inputs > 0
Tensor softplus(Graph& g, const Tensor& a);
Tensor sqrt(Graph& g, const Tensor& a);
Tensor negate(Graph& g, const Tensor& a);
Tensor scale(Graph& g, const Tensor& a, double c);
Tensor add_scalar(Graph& g, const Tensor& a, double c);

// Reductions. axis = -1 reduces everything to a scalar; for rank-2 tensors
// axis 0 reduces rows (-> [n]), axis 1 reduces columns (-> [m]).
Tensor sum(Graph& g, const Tensor& a, int axis = -1);
Tensor mean(Graph& g, const Tensor& a, int axis = -1);
Tensor logsumexp(Graph& g, const Tensor& a, int axis = -1);

// Concatenation along `axis` (0 for rank-1; 0 or 1 for rank-2).
Tensor concat(Graph& g, const std::vector<Tensor>& ts, int axis);

// Contiguous slice [start, start+len) along `axis`.
Tensor slice(Graph& g, const Tensor& a, int axis, size_t start, size_t len);

// Copy with a new shape (same number of elements).
Tensor reshape(Graph& g, const Tensor& a, std::vector<size_t> shape);

// S[i,j] = squared L2 distance between row i of a [m x d] and row j of
// b [k x d]; result [m x k].
Tensor pairwise_sqdist(Graph& g, const Tensor& a, const Tensor& b);

// out[i, :] = table[idx[i], :]; gradients scatter-add into the table rows.
Tensor embed_rows(Graph& g, const Tensor& table,
                  const std::vector<size_t>& idx);

// out[i] = a[i, idx[i]] for rank-2 a; idx.size() == rows.
Tensor take_per_row(Graph& g, const Tensor& a, const std::vector<size_t>& idx);

}  // namespace ops

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t n_checked = 0;
  std::string worst;  // "tensor#i[e]" of the worst element
};

// f builds a scalar output from `point` on the given graph. Analytic
// gradients come from one backward pass; numeric gradients perturb each
// element of each point tensor by +-step with recording disabled. The
// relative error uses denominator max(|analytic|, |numeric|, 1e-3).
GradCheckReport gradient_check(
    const std::function<Tensor(Graph&, std::vector<Tensor>&)>& f,
    std::vector<Tensor> point, double step = 1e-4);

// ---------------------------------------------------------------------------
// Tensor serialization: magic "TNSR", version u8, rank u8, extents u32 LE,
// payload f64 LE.
// ---------------------------------------------------------------------------

void tensor_write(std::ostream& os, const Tensor& t);
Tensor tensor_read(std::istream& is);
void tensor_save(const std::string& path, const Tensor& t);
Tensor tensor_load(const std::string& path);

}  // namespace fhvae
