// Copyright 2026 The morphseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <type_traits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "morphseg/entmax.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/random.hpp"

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape records every primitive applied to its variables together with a
// closure that propagates the output adjoint back to the inputs. Backward()
// replays those closures in reverse recording order, which is a reverse
// topological order because inputs are always recorded before their uses.
// Most primitives treat tensors as matrices: rank-1 tensors behave as a
// single row.
namespace morphseg::ad {

using Shape = std::vector<std::size_t>;

inline std::string ShapeString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    Validate();
    data_.assign(Count(shape_), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    Validate();
    if (data_.size() != Count(shape_)) {
      throw ArgumentError("tensor: " + std::to_string(data_.size()) +
                          " values do not fill shape " + ShapeString(shape_));
    }
  }

  static Tensor Scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T* row(std::size_t r) { return data_.data() + r * cols(); }
  const T* row(std::size_t r) const { return data_.data() + r * cols(); }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  bool requires_grad = false;

 private:
  static std::size_t Count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  void Validate() const {
    if (shape_.empty()) throw ArgumentError("tensor: rank must be >= 1");
    for (std::size_t e : shape_) {
      if (e == 0) throw ArgumentError("tensor: zero extent in shape " + ShapeString(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  // Propagates the adjoint of node `self` into the adjoints of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With record = false no closures are kept; values are still computed.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients are tracked when value.requires_grad is set.
  Var<T> Leaf(Tensor<T> value, std::string name = {}) {
    const bool rg = record_ && value.requires_grad;
    nodes_.push_back(Node{std::move(value), {}, {}, rg, true, std::move(name), nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> Constant(Tensor<T> value) {
    value.requires_grad = false;
    return Leaf(std::move(value));
  }

  // Leaf that refers to `value` without copying it; `value` must outlive
  // the tape.
  Var<T> Borrow(const Tensor<T>& value, bool requires_grad, std::string name = {}) {
    nodes_.push_back(Node{{}, {}, {}, record_ && requires_grad, true, std::move(name), &value});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> Record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool rg = false;
    if (record_) {
      for (const Var<T>& v : inputs) rg = rg || requires_grad(v.id());
    }
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(backward) : BackwardFn{}, rg,
                          false, {}, nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  // Same as above for a runtime-sized input list.
  Var<T> Record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    bool rg = false;
    if (record_) {
      for (const Var<T>& v : inputs) rg = rg || requires_grad(v.id());
    }
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(backward) : BackwardFn{}, rg,
                          false, {}, nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool is_leaf(std::size_t id) const { return nodes_[id].leaf; }
  const std::string& name(std::size_t id) const { return nodes_[id].name; }

  // Adjoint of node `id`; allocated as zeros on first use.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  void RunBackward(std::size_t id) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }

  Tensor<T> TakeGrad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) return Tensor<T>(value(id).shape());
    return std::move(n.grad);
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
    std::string name;
    const Tensor<T>* external = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;
};

template <class T>
struct Gradient {
  std::string name;
  std::size_t id = 0;
  Tensor<T> grad;
};

// dLoss/dLeaf for every gradient-tracking leaf, in leaf creation order.
// Leaves the loss does not depend on receive zeros.
template <class T>
std::vector<Gradient<T>> Backward(Tape<T>& tape, Var<T> loss) {
  if (loss.tape() != &tape) throw ArgumentError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ArgumentError("backward: loss must be a scalar, got shape " +
                        ShapeString(loss.shape()));
  }
  if (tape.requires_grad(loss.id())) {
    tape.grad(loss.id())[0] = T(1);
    for (std::size_t id = loss.id() + 1; id-- > 0;) tape.RunBackward(id);
  }
  std::vector<Gradient<T>> out;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (tape.is_leaf(id) && tape.requires_grad(id)) {
      out.push_back(Gradient<T>{tape.name(id), id, tape.TakeGrad(id)});
    }
  }
  return out;
}

// ---------------------------------------------------------------- helpers

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<RowMatrix<T>> AsMatrix(Tensor<T>& t) {
  return {t.storage().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

template <class T>
Eigen::Map<const RowMatrix<T>> AsMatrix(const Tensor<T>& t) {
  return {t.storage().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

template <class T>
void RequireSameTape(const char* op, std::initializer_list<Var<T>> vars) {
  Tape<T>* tape = vars.begin()->tape();
  for (const Var<T>& v : vars) {
    if (v.tape() != tape) throw ArgumentError(std::string(op) + ": operands on different tapes");
  }
}

template <class T>
[[noreturn]] void ShapeMismatch(const char* op, const Var<T>& a, const Var<T>& b) {
  throw ArgumentError(std::string(op) + ": shape mismatch " + ShapeString(a.shape()) + " vs " +
                      ShapeString(b.shape()));
}

template <class T>
void RequireMatrix(const char* op, const Var<T>& a) {
  if (a.value().rank() > 2) {
    throw ArgumentError(std::string(op) + ": expected a matrix, got " + ShapeString(a.shape()));
  }
}

inline Shape MatrixShape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

}  // namespace detail

// ---------------------------------------------------------- linear algebra

// [m x k] * [k x n]
template <class T>
Var<T> MatMul(Var<T> a, Var<T> b) {
  detail::RequireSameTape("matmul", {a, b});
  detail::RequireMatrix("matmul", a);
  detail::RequireMatrix("matmul", b);
  if (a.cols() != b.rows()) detail::ShapeMismatch("matmul", a, b);
  Tensor<T> out(detail::MatrixShape(a.rows(), b.cols()));
  detail::AsMatrix(out).noalias() = detail::AsMatrix(a.value()) * detail::AsMatrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto g = detail::AsMatrix(std::as_const(t.grad(self)));
    if (t.requires_grad(ia)) {
      detail::AsMatrix(t.grad(ia)).noalias() += g * detail::AsMatrix(t.value(ib)).transpose();
    }
    if (t.requires_grad(ib)) {
      detail::AsMatrix(t.grad(ib)).noalias() += detail::AsMatrix(t.value(ia)).transpose() * g;
    }
  });
}

// [m x k] * [n x k]^T
template <class T>
Var<T> MatMulNT(Var<T> a, Var<T> b) {
  detail::RequireSameTape("matmul_nt", {a, b});
  detail::RequireMatrix("matmul_nt", a);
  detail::RequireMatrix("matmul_nt", b);
  if (a.cols() != b.cols()) detail::ShapeMismatch("matmul_nt", a, b);
  Tensor<T> out(detail::MatrixShape(a.rows(), b.rows()));
  detail::AsMatrix(out).noalias() =
      detail::AsMatrix(a.value()) * detail::AsMatrix(b.value()).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto g = detail::AsMatrix(std::as_const(t.grad(self)));
    if (t.requires_grad(ia)) {
      detail::AsMatrix(t.grad(ia)).noalias() += g * detail::AsMatrix(t.value(ib));
    }
    if (t.requires_grad(ib)) {
      detail::AsMatrix(t.grad(ib)).noalias() += g.transpose() * detail::AsMatrix(t.value(ia));
    }
  });
}

// --------------------------------------------------------- elementwise ops

template <class T>
Var<T> Add(Var<T> a, Var<T> b) {
  detail::RequireSameTape("add", {a, b});
  if (a.shape() != b.shape()) detail::ShapeMismatch("add", a, b);
  Tensor<T> out = a.value();
  out.requires_grad = false;
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      Tensor<T>& d = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

// Adds a row vector (shape [n] or [1 x n]) to every row of an [m x n] matrix.
template <class T>
Var<T> AddRow(Var<T> a, Var<T> bias) {
  detail::RequireSameTape("add_row", {a, bias});
  detail::RequireMatrix("add_row", a);
  if (bias.value().size() != a.cols()) detail::ShapeMismatch("add_row", a, bias);
  Tensor<T> out = a.value();
  out.requires_grad = false;
  const std::size_t m = out.rows(), n = out.cols();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < m; ++r) {
    T* row = out.row(r);
    for (std::size_t c = 0; c < n; ++c) row[c] += bv[c];
  }
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape()->Record(std::move(out), {a, bias}, [ia, ib, m, n](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor<T>& d = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& d = t.grad(ib);
      for (std::size_t r = 0; r < m; ++r) {
        const T* row = g.row(r);
        for (std::size_t c = 0; c < n; ++c) d[c] += row[c];
      }
    }
  });
}

template <class T>
Var<T> Scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  out.requires_grad = false;
  for (T& v : out.storage()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape()->Record(std::move(out), {a}, [ia, factor](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
  });
}

// Elementwise product.
template <class T>
Var<T> Mul(Var<T> a, Var<T> b) {
  detail::RequireSameTape("mul", {a, b});
  if (a.shape() != b.shape()) detail::ShapeMismatch("mul", a, b);
  Tensor<T> out = a.value();
  out.requires_grad = false;
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor<T>& d = t.grad(ia);
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& d = t.grad(ib);
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> Relu(Var<T> a) {
  Tensor<T> out = a.value();
  out.requires_grad = false;
  for (T& v : out.storage()) v = v > T(0) ? v : T(0);
  const std::size_t ia = a.id();
  return a.tape()->Record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& x = t.value(ia);
    Tensor<T>& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) d[i] += g[i];
    }
  });
}

// Sum of all entries, shape [1].
template <class T>
Var<T> Sum(Var<T> a) {
  T total = T(0);
  for (T v : a.value().storage()) total += v;
  const std::size_t ia = a.id();
  return a.tape()->Record(Tensor<T>::Scalar(total), {a}, [ia](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (T& v : t.grad(ia).storage()) v += g;
  });
}

// --------------------------------------------------------- shape handling

template <class T>
Var<T> Reshape(Var<T> a, Shape shape) {
  Tensor<T> out(std::move(shape), a.value().storage());
  const std::size_t ia = a.id();
  return a.tape()->Record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> Transpose(Var<T> a) {
  detail::RequireMatrix("transpose", a);
  Tensor<T> out(detail::MatrixShape(a.cols(), a.rows()));
  detail::AsMatrix(out) = detail::AsMatrix(a.value()).transpose();
  const std::size_t ia = a.id();
  return a.tape()->Record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    detail::AsMatrix(t.grad(ia)) +=
        detail::AsMatrix(std::as_const(t.grad(self))).transpose();
  });
}

template <class T>
Var<T> SliceRows(Var<T> a, std::size_t begin, std::size_t count) {
  detail::RequireMatrix("slice_rows", a);
  if (count == 0 || begin + count > a.rows()) {
    throw ArgumentError("slice_rows: rows [" + std::to_string(begin) + ", " +
                        std::to_string(begin + count) + ") out of range for " +
                        ShapeString(a.shape()));
  }
  const std::size_t n = a.cols();
  Tensor<T> out(detail::MatrixShape(count, n));
  std::copy_n(a.value().row(begin), count * n, out.storage().begin());
  const std::size_t ia = a.id();
  return a.tape()->Record(std::move(out), {a}, [ia, begin, count, n](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    T* d = t.grad(ia).row(begin);
    for (std::size_t i = 0; i < count * n; ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> SliceCols(Var<T> a, std::size_t begin, std::size_t count) {
  detail::RequireMatrix("slice_cols", a);
  if (count == 0 || begin + count > a.cols()) {
    throw ArgumentError("slice_cols: columns [" + std::to_string(begin) + ", " +
                        std::to_string(begin + count) + ") out of range for " +
                        ShapeString(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out(detail::MatrixShape(m, count));
  for (std::size_t r = 0; r < m; ++r) std::copy_n(a.value().row(r) + begin, count, out.row(r));
  const std::size_t ia = a.id();
  return a.tape()->Record(std::move(out), {a}, [ia, begin, count, m, n](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(ia);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < count; ++c) d[r * n + begin + c] += g[r * count + c];
    }
  });
}

template <class T>
Var<T> ConcatRows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no operands");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::RequireMatrix("concat_rows", p);
    if (p.cols() != n) detail::ShapeMismatch("concat_rows", parts.front(), p);
    if (p.tape() != parts.front().tape()) throw ArgumentError("concat_rows: operands on different tapes");
    m += p.rows();
  }
  Tensor<T> out(detail::MatrixShape(m, n));
  std::vector<std::size_t> ids, offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.row(offset));
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += p.rows();
  }
  return parts.front().tape()->Record(
      std::move(out), parts, [ids, offsets](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor<T>& d = t.grad(ids[k]);
          const T* src = g.row(offsets[k]);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
        }
      });
}

template <class T>
Var<T> ConcatCols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no operands");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::RequireMatrix("concat_cols", p);
    if (p.rows() != m) detail::ShapeMismatch("concat_cols", parts.front(), p);
    if (p.tape() != parts.front().tape()) throw ArgumentError("concat_cols: operands on different tapes");
    n += p.cols();
  }
  Tensor<T> out(detail::MatrixShape(m, n));
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(p.value().row(r), w, out.row(r) + offset);
    ids.push_back(p.id());
    offsets.push_back(offset);
    widths.push_back(w);
    offset += w;
  }
  return parts.front().tape()->Record(
      std::move(out), parts, [ids, offsets, widths, m, n](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor<T>& d = t.grad(ids[k]);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < widths[k]; ++c) {
              d[r * widths[k] + c] += g[r * n + offsets[k] + c];
            }
          }
        }
      });
}

// --------------------------------------------------------- model pieces

// Rows of `table` selected by `ids`.
template <class T>
Var<T> Embedding(Var<T> table, std::span<const int> ids) {
  detail::RequireMatrix("embedding", table);
  const std::size_t vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw ArgumentError("embedding: empty id sequence");
  Tensor<T> out(detail::MatrixShape(ids.size(), d));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ArgumentError("embedding: token id " + std::to_string(ids[r]) +
                          " out of range for vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(table.value().row(static_cast<std::size_t>(ids[r])), d, out.row(r));
  }
  const std::size_t it = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape()->Record(std::move(out), {table}, [it, saved, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& dt = t.grad(it);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      T* dst = dt.row(static_cast<std::size_t>(saved[r]));
      const T* src = g.row(r);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

// Row-wise normalization followed by a per-column gain and bias.
template <class T>
Var<T> LayerNorm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5) {
  detail::RequireSameTape("layer_norm", {x, gain, bias});
  detail::RequireMatrix("layer_norm", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.value().size() != n) detail::ShapeMismatch("layer_norm", x, gain);
  if (bias.value().size() != n) detail::ShapeMismatch("layer_norm", x, bias);
  Tensor<T> out(x.shape());
  auto normalized = std::make_shared<std::vector<T>>(m * n);
  auto inv_std = std::make_shared<std::vector<T>>(m);
  const auto& g = gain.value();
  const auto& b = bias.value();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = x.value().row(r);
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = static_cast<T>(rs);
    T* o = out.row(r);
    T* xh = normalized->data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      xh[c] = static_cast<T>((row[c] - mean) * rs);
      o[c] = xh[c] * g[c] + b[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->Record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, m, n, normalized, inv_std](Tape<T>& t, std::size_t self) {
        const Tensor<T>& dy = t.grad(self);
        if (t.requires_grad(ig)) {
          Tensor<T>& dg = t.grad(ig);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) dg[c] += dy[r * n + c] * (*normalized)[r * n + c];
          }
        }
        if (t.requires_grad(ib)) {
          Tensor<T>& db = t.grad(ib);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) db[c] += dy[r * n + c];
          }
        }
        if (t.requires_grad(ix)) {
          const Tensor<T>& gv = t.value(ig);
          Tensor<T>& dx = t.grad(ix);
          std::vector<T> dxh(n);
          for (std::size_t r = 0; r < m; ++r) {
            const T* xh = normalized->data() + r * n;
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t c = 0; c < n; ++c) {
              dxh[c] = dy[r * n + c] * gv[c];
              mean_d += dxh[c];
              mean_dx += dxh[c] * xh[c];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            const T rs = (*inv_std)[r];
            for (std::size_t c = 0; c < n; ++c) {
              dx[r * n + c] += rs * (dxh[c] - mean_d - xh[c] * mean_dx);
            }
          }
        }
      });
}

// Keep-mask with entries 0 or 1/(1-p), drawn from a counter-based stream so
// the mask depends only on `key` and the element index.
template <class T>
Tensor<T> DropoutMask(const Shape& shape, double p, std::uint64_t key) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout: probability must be in [0, 1)");
  Tensor<T> mask(shape, T(1));
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = BitsToUnit(MixKeys(key, i)) < p ? T(0) : keep;
  }
  return mask;
}

template <class T>
Var<T> Dropout(Var<T> x, const Tensor<T>& mask) {
  if (mask.shape() != x.shape()) {
    throw ArgumentError("dropout: mask shape " + ShapeString(mask.shape()) +
                        " does not match input " + ShapeString(x.shape()));
  }
  Tensor<T> out = x.value();
  out.requires_grad = false;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id();
  auto saved = std::make_shared<std::vector<T>>(mask.storage());
  return x.tape()->Record(std::move(out), {x}, [ix, saved](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*saved)[i];
  });
}

// Fixed sinusoidal encodings for positions [offset, offset + rows):
// even columns sin(pos / 10000^(2i/d)), odd columns the matching cosine.
template <class T>
Tensor<T> SinusoidalPositions(std::size_t rows, std::size_t d, std::size_t offset = 0) {
  Tensor<T> pe(detail::MatrixShape(rows, d));
  for (std::size_t r = 0; r < rows; ++r) {
    const double pos = static_cast<double>(r + offset);
    for (std::size_t c = 0; c < d; ++c) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d));
      pe.at(r, c) = static_cast<T>(c % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return pe;
}

// x + positional encodings; the encodings carry no gradient.
template <class T>
Var<T> AddPositions(Var<T> x, std::span<const std::size_t> positions) {
  detail::RequireMatrix("position_encode", x);
  if (positions.size() != x.rows()) {
    throw ArgumentError("position_encode: " + std::to_string(positions.size()) +
                        " positions for " + std::to_string(x.rows()) + " rows");
  }
  const std::size_t d = x.cols();
  Tensor<T> out = x.value();
  out.requires_grad = false;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Tensor<T> pe = SinusoidalPositions<T>(1, d, positions[r]);
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) += pe[c];
  }
  const std::size_t ix = x.id();
  return x.tape()->Record(std::move(out), {x}, [ix](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

// Packed multi-sequence attention. Queries of segment s occupy rows
// [q_begin, q_begin + q_len) of Q and attend to key rows
// [k_begin, k_begin + k_len) of K and V.
struct AttentionSegment {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t k_begin = 0;
  std::size_t k_len = 0;
};

struct AttentionLayout {
  std::vector<AttentionSegment> segments;
  // Per key row of K; masked keys receive no attention.
  std::vector<std::uint8_t> key_masked;
  // Query i of a segment sees key j only when j <= i + (k_len - q_len).
  bool causal = false;
};

// Scaled dot-product attention over `heads` column blocks, softmax-normalized.
// A query with every key masked outputs zeros.
template <class T>
Var<T> Attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout, std::size_t heads) {
  detail::RequireSameTape("attention", {q, k, v});
  const std::size_t d = q.cols();
  if (k.cols() != d) detail::ShapeMismatch("attention", q, k);
  if (v.shape() != k.shape()) detail::ShapeMismatch("attention", k, v);
  if (heads == 0 || d % heads != 0) {
    throw ArgumentError("attention: width " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
  if (!layout.key_masked.empty() && layout.key_masked.size() != k.rows()) {
    throw ArgumentError("attention: key mask has " + std::to_string(layout.key_masked.size()) +
                        " entries for " + std::to_string(k.rows()) + " keys");
  }
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::size_t prob_size = 0;
  for (const auto& s : layout.segments) {
    if (s.q_begin + s.q_len > q.rows() || s.k_begin + s.k_len > k.rows()) {
      throw ArgumentError("attention: segment out of range");
    }
    if (layout.causal && s.k_len < s.q_len) {
      throw ArgumentError("attention: causal segment with fewer keys than queries");
    }
    prob_size += s.q_len * s.k_len * heads;
  }
  auto probs = std::make_shared<std::vector<T>>(prob_size, T(0));
  auto layout_copy = std::make_shared<AttentionLayout>(layout);

  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  Tensor<T> out(detail::MatrixShape(q.rows(), d));
  std::vector<T> scores;
  std::size_t p_off = 0;
  for (const auto& s : layout.segments) {
    const std::size_t shift = s.k_len - std::min(s.k_len, s.q_len);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        T* p = probs->data() + p_off + (h * s.q_len + i) * s.k_len;
        const T* qi = qv.row(s.q_begin + i) + c0;
        const std::size_t limit = layout.causal ? std::min(s.k_len, i + shift + 1) : s.k_len;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          if (!layout.key_masked.empty() && layout.key_masked[s.k_begin + j]) continue;
          const T* kj = kv.row(s.k_begin + j) + c0;
          T dot = T(0);
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          p[j] = dot * scale;
          mx = std::max(mx, p[j]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // fully masked row
        T total = T(0);
        for (std::size_t j = 0; j < limit; ++j) {
          if (!layout.key_masked.empty() && layout.key_masked[s.k_begin + j]) {
            p[j] = T(0);
            continue;
          }
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        T* o = out.row(s.q_begin + i) + c0;
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] /= total;
          if (p[j] == T(0)) continue;
          const T* vj = vv.row(s.k_begin + j) + c0;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * vj[c];
        }
      }
    }
    p_off += s.q_len * s.k_len * heads;
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->Record(
      std::move(out), {q, k, v},
      [iq, ik, iv, heads, dh, scale, probs, layout_copy](Tape<T>& t, std::size_t self) {
        const Tensor<T>& dout = t.grad(self);
        const Tensor<T>& qv = t.value(iq);
        const Tensor<T>& kv = t.value(ik);
        const Tensor<T>& vv = t.value(iv);
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
        Tensor<T>* dq = gq ? &t.grad(iq) : nullptr;
        Tensor<T>* dk = gk ? &t.grad(ik) : nullptr;
        Tensor<T>* dv = gv ? &t.grad(iv) : nullptr;
        std::vector<T> dp;
        std::size_t p_off = 0;
        for (const auto& s : layout_copy->segments) {
          dp.assign(s.k_len, T(0));
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < s.q_len; ++i) {
              const T* p = probs->data() + p_off + (h * s.q_len + i) * s.k_len;
              const T* doi = dout.row(s.q_begin + i) + c0;
              T weighted = T(0);
              for (std::size_t j = 0; j < s.k_len; ++j) {
                if (p[j] == T(0)) {
                  dp[j] = T(0);
                  continue;
                }
                const T* vj = vv.row(s.k_begin + j) + c0;
                T dot = T(0);
                for (std::size_t c = 0; c < dh; ++c) dot += doi[c] * vj[c];
                dp[j] = dot;
                weighted += p[j] * dot;
                if (dv != nullptr) {
                  T* dvj = dv->row(s.k_begin + j) + c0;
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * doi[c];
                }
              }
              const T* qi = qv.row(s.q_begin + i) + c0;
              T* dqi = dq != nullptr ? dq->row(s.q_begin + i) + c0 : nullptr;
              for (std::size_t j = 0; j < s.k_len; ++j) {
                if (p[j] == T(0)) continue;
                const T ds = p[j] * (dp[j] - weighted) * scale;
                const T* kj = kv.row(s.k_begin + j) + c0;
                if (dqi != nullptr) {
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                }
                if (dk != nullptr) {
                  T* dkj = dk->row(s.k_begin + j) + c0;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
          p_off += s.q_len * s.k_len * heads;
        }
      });
}

struct LossStats {
  double sum = 0.0;        // summed per-token loss
  std::size_t tokens = 0;  // scored (non-ignored) rows
};

// Mean 1.5-entmax (or general alpha) loss over rows whose target is not
// `ignore_index`. Entmax is solved in double precision whatever T is.
template <class T>
Var<T> EntmaxLoss(Var<T> logits, std::span<const int> targets, double alpha = 1.5,
                  int ignore_index = -1, LossStats* stats = nullptr) {
  detail::RequireMatrix("entmax_loss", logits);
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    throw ArgumentError("entmax_loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(m) + " rows");
  }
  auto grads = std::make_shared<std::vector<T>>(m * n, T(0));
  std::vector<double> z(n), prob(n);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw ArgumentError("entmax_loss: target " + std::to_string(targets[r]) +
                          " out of range for " + std::to_string(n) + " classes");
    }
    const T* row = logits.value().row(r);
    for (std::size_t c = 0; c < n; ++c) z[c] = static_cast<double>(row[c]);
    total += entmax::EntmaxLossInto(z, static_cast<std::size_t>(targets[r]), alpha, prob);
    T* g = grads->data() + r * n;
    for (std::size_t c = 0; c < n; ++c) g[c] = static_cast<T>(prob[c]);
    g[targets[r]] -= T(1);
    ++count;
  }
  if (count == 0) throw ArgumentError("entmax_loss: no scored rows");
  if (stats != nullptr) {
    stats->sum += total;
    stats->tokens += count;
  }
  const double inv = 1.0 / static_cast<double>(count);
  const std::size_t il = logits.id();
  return logits.tape()->Record(
      Tensor<T>::Scalar(static_cast<T>(total * inv)), {logits},
      [il, grads, inv](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] * static_cast<T>(inv);
        Tensor<T>& d = t.grad(il);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (*grads)[i];
      });
}

// ---------------------------------------------------------- gradient check

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

// Builds the scalar objective on a fresh tape from leaves bound to `params`.
template <class T>
using Objective = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

namespace detail {

template <class T>
std::vector<Gradient<T>> AnalyticGradients(const Objective<T>& f,
                                           const std::vector<NamedTensor<T>>& params) {
  Tape<T> tape;
  std::vector<Var<T>> vars;
  for (const auto& p : params) {
    Tensor<T> v = p.value;
    v.requires_grad = true;
    vars.push_back(tape.Leaf(std::move(v), p.name));
  }
  return Backward(tape, f(tape, vars));
}

template <class T, class U>
GradCheckReport CompareCentral(const std::vector<Gradient<T>>& grads, const Objective<U>& f,
                               std::vector<NamedTensor<U>> params, double eps, double floor) {
  auto evaluate = [&] {
    Tape<U> tape(false);
    std::vector<Var<U>> vars;
    for (const auto& p : params) vars.push_back(tape.Borrow(p.value, false, p.name));
    return static_cast<double>(f(tape, vars).value()[0]);
  };
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<U>& x = params[p].value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const U saved = x[i];
      x[i] = static_cast<U>(saved + eps);
      const double up = evaluate();
      x[i] = static_cast<U>(saved - eps);
      const double down = evaluate();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = static_cast<double>(grads[p].grad[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double err = std::abs(analytic - numeric) / denom;
      if (err > report.max_relative_error || report.worst_parameter.empty()) {
        report.max_relative_error = err;
        report.worst_parameter = params[p].name;
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace detail

// Compares Backward() against central differences (f(x+e) - f(x-e)) / 2e for
// every coordinate of every parameter. The relative error of a coordinate is
// |a - n| / max(|a|, |n|, floor). The floor sits above the difference
// quotient's own noise (truncation plus roundoff, ~1e-10 in double), so
// gradients that are exactly zero do not report noise as error.
template <class T>
GradCheckReport GradCheck(const Objective<T>& f, std::vector<NamedTensor<T>> params,
                          double eps = std::is_same_v<T, float> ? 1e-3 : 1e-5,
                          double floor = 1e-4) {
  const auto grads = detail::AnalyticGradients(f, params);
  return detail::CompareCentral(grads, f, std::move(params), eps, floor);
}

// Analytic gradients of a T-precision objective against central differences
// of a double-precision oracle evaluated at the same (T-representable)
// point. Difference quotients in single precision lose ~4 significant digits
// to cancellation, so they cannot certify a single-precision backward pass.
template <class T>
GradCheckReport GradCheckMixed(const Objective<T>& f, const Objective<double>& oracle,
                               const std::vector<NamedTensor<T>>& params, double eps = 1e-5,
                               double floor = 1e-4) {
  const auto grads = detail::AnalyticGradients(f, params);
  std::vector<NamedTensor<double>> wide;
  for (const auto& p : params) {
    wide.push_back({p.name, Tensor<double>(p.value.shape(), std::vector<double>(
                                                                  p.value.storage().begin(),
                                                                  p.value.storage().end()))});
  }
  return detail::CompareCentral(grads, oracle, std::move(wide), eps, floor);
}

}  // namespace morphseg::ad
