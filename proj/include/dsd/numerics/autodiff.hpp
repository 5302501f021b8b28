// Copyright 2026 The dsd Authors. All Rights Reserved.
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
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dsd/numerics/tensor.hpp"

namespace dsd {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Accumulated gradient. Throws UsageError if the node never received one.
  const Tensor& grad() const;
  bool has_grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  explicit operator bool() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so the node index is already a
/// topological order and backward is a single reverse sweep. A tape built
/// with `grad_enabled = false` records values only (no closures, no
/// gradient buffers); this is the inference path and `backward` refuses it.
///
/// Non-leaf gradients are transient and reset on each backward call; leaf
/// gradients accumulate until `zero_grad`.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var leaf(Tensor value, bool requires_grad = true) {
    if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    n.is_leaf = true;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `fn` is dropped when no input needs a gradient.
  Var record(Tensor value, const char* op, std::initializer_list<Var> inputs,
             BackwardFn fn) {
    return record(std::move(value), op, std::vector<Var>(inputs), std::move(fn));
  }

  Var record(Tensor value, const char* op, const std::vector<Var>& inputs,
             BackwardFn fn) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw UsageError(std::string(op) + ": input from a different tape");
      n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  bool needs_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of `v`, zero-allocated on first use.
  Tensor& grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(const Var& loss) {
    if (!grad_enabled_) throw UsageError("gradients unavailable: tape was built frozen");
    if (loss.tape() != this) throw UsageError("backward: loss belongs to another tape");
    if (loss.value().size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " +
                       shape_str(loss.shape()));
    }
    for (Node& n : nodes_) {
      if (!n.is_leaf) {
        n.has_grad = false;
        n.grad = Tensor();
      }
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss)[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.value, n.grad);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = false;
    const char* op = "";
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return tape_->nodes_[id_].value; }
inline bool Var::has_grad() const { return tape_->nodes_[id_].has_grad; }
inline bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }
inline const Tensor& Var::grad() const {
  const auto& n = tape_->nodes_[id_];
  if (!n.has_grad) throw UsageError("node has no gradient");
  return n.grad;
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
inline MutMap as_mat(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

inline void accumulate(Tape& tp, const Var& v, const Tensor& g) {
  if (!tp.needs_grad(v)) return;
  Tensor& buf = tp.grad_buffer(v);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Matrix product a[n x k] * b[k x m].
/// dL/da = g * b^T, dL/db = a^T * g.
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents differ " + shape_str(av.shape()) + " * " +
                         shape_str(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  return a.tape()->record(std::move(out), "matmul", {a, b},
                          [a, b](Tape& tp, const Tensor&, const Tensor& g) {
                            if (tp.needs_grad(a)) {
                              detail::as_mat(tp.grad_buffer(a)).noalias() +=
                                  detail::as_mat(g) * detail::as_mat(b.value()).transpose();
                            }
                            if (tp.needs_grad(b)) {
                              detail::as_mat(tp.grad_buffer(b)).noalias() +=
                                  detail::as_mat(a.value()).transpose() * detail::as_mat(g);
                            }
                          });
}

/// a[n x k] * b[m x k]^T.
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul_nt");
  detail::require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(av.shape()) + " * " +
                         shape_str(bv.shape()) + "^T");
  }
  Tensor out({av.rows(), bv.rows()});
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv).transpose();
  return a.tape()->record(std::move(out), "matmul_nt", {a, b},
                          [a, b](Tape& tp, const Tensor&, const Tensor& g) {
                            if (tp.needs_grad(a)) {
                              detail::as_mat(tp.grad_buffer(a)).noalias() +=
                                  detail::as_mat(g) * detail::as_mat(b.value());
                            }
                            if (tp.needs_grad(b)) {
                              detail::as_mat(tp.grad_buffer(b)).noalias() +=
                                  detail::as_mat(g).transpose() * detail::as_mat(a.value());
                            }
                          });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape()->record(std::move(out), "add", {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    detail::accumulate(tp, a, g);
    detail::accumulate(tp, b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape()->record(std::move(out), "sub", {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    detail::accumulate(tp, a, g);
    if (tp.needs_grad(b)) {
      Tensor& buf = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
    }
  });
}

/// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape()->record(std::move(out), "mul", {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    if (tp.needs_grad(a)) {
      Tensor& buf = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * b.value()[i];
    }
    if (tp.needs_grad(b)) {
      Tensor& buf = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * a.value()[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return a.tape()->record(std::move(out), "scale", {a}, [a, c](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += c * g[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return a.tape()->record(std::move(out), "add_scalar", {a},
                          [a](Tape& tp, const Tensor&, const Tensor& g) { detail::accumulate(tp, a, g); });
}

/// a[n x m] + row, where row holds m values and is broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "add_row");
  const std::size_t n = av.rows(), m = av.cols();
  if (row.value().size() != m) {
    throw DimensionError("add_row: row of size " + std::to_string(row.value().size()) +
                         " for matrix " + shape_str(av.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += row.value()[j];
  return a.tape()->record(std::move(out), "add_row", {a, row},
                          [a, row, n, m](Tape& tp, const Tensor&, const Tensor& g) {
                            detail::accumulate(tp, a, g);
                            if (tp.needs_grad(row)) {
                              Tensor& buf = tp.grad_buffer(row);
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < m; ++j) buf[j] += g[i * m + j];
                            }
                          });
}

/// Elementwise scalar function with derivative expressed through (x, y).
template <typename F, typename DF>
Var unary(const Var& a, const char* op, F f, DF df) {
  Tensor out = a.value();
  for (double& v : out.data()) v = f(v);
  return a.tape()->record(std::move(out), op, {a}, [a, df](Tape& tp, const Tensor& y, const Tensor& g) {
    Tensor& buf = tp.grad_buffer(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * df(x[i], y[i]);
  });
}

inline Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

/// x * sigmoid(x).
inline Var silu(const Var& a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

/// Natural log; non-positive inputs surface as a NumericError.
inline Var log(const Var& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var exp(const Var& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Clamps into [lo, hi]; gradient passes only where the input was inside.
inline Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(Tensor::scalar(s), "sum", {a}, [a](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& buf = tp.grad_buffer(a);
    for (double& v : buf.data()) v += g[0];
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(Tensor::scalar(s / n), "mean", {a}, [a, n](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& buf = tp.grad_buffer(a);
    for (double& v : buf.data()) v += g[0] / n;
  });
}

/// Column means of a[n x m] -> [1 x m].
inline Var mean_rows(const Var& a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "mean_rows");
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({1, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += av(i, j);
  for (double& v : out.data()) v /= static_cast<double>(n);
  return a.tape()->record(std::move(out), "mean_rows", {a}, [a, n, m](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& buf = tp.grad_buffer(a);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) buf[i * m + j] += g[j] * inv;
  });
}

/// Row-wise softmax of scale * x. Rows are shifted by their max first.
inline Var softmax_rows(const Var& x, double scale = 1.0) {
  if (!(scale > 0.0)) throw ParameterError("softmax_rows: scale must be positive");
  const Tensor& xv = x.value();
  if (!xv.all_finite()) throw NumericError("softmax_rows: non-finite input");
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, xv[i * m + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp(scale * (xv[i * m + j] - mx));
      out[i * m + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return x.tape()->record(
      std::move(out), "softmax_rows", {x}, [x, n, m, scale](Tape& tp, const Tensor& y, const Tensor& g) {
        Tensor& buf = tp.grad_buffer(x);
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
          for (std::size_t j = 0; j < m; ++j)
            buf[i * m + j] += scale * y[i * m + j] * (g[i * m + j] - dot);
        }
      });
}

/// Per column j: (1/lambda) * log sum_i exp(lambda * a[i, j]) -> [m].
/// The gradient wrt a[:, j] is softmax_i(lambda * a[:, j]).
inline Var logsumexp_over_rows(const Var& a, double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("logsumexp_over_rows: lambda must be positive");
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({m});
  Tensor weights(Shape{n, m});
  for (std::size_t j = 0; j < m; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, av[i * m + j]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(lambda * (av[i * m + j] - mx));
      weights[i * m + j] = e;
      z += e;
    }
    for (std::size_t i = 0; i < n; ++i) weights[i * m + j] /= z;
    out[j] = mx + std::log(z) / lambda;
  }
  return a.tape()->record(std::move(out), "logsumexp_over_rows", {a},
                          [a, weights = std::move(weights), n, m](Tape& tp, const Tensor&, const Tensor& g) {
                            Tensor& buf = tp.grad_buffer(a);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j)
                                buf[i * m + j] += g[j] * weights[i * m + j];
                          });
}

/// Per column maximum over rows -> [m]. Gradient routes to the first argmax.
inline Var max_over_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({m});
  std::vector<std::size_t> arg(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    out[j] = av[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (av[i * m + j] > out[j]) {
        out[j] = av[i * m + j];
        arg[j] = i;
      }
    }
  }
  return a.tape()->record(std::move(out), "max_over_rows", {a},
                          [a, arg = std::move(arg), m](Tape& tp, const Tensor&, const Tensor& g) {
                            Tensor& buf = tp.grad_buffer(a);
                            for (std::size_t j = 0; j < m; ++j) buf[arg[j] * m + j] += g[j];
                          });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return a.tape()->record(a.value().reshaped(std::move(shape)), "reshape", {a},
                          [a](Tape& tp, const Tensor&, const Tensor& g) { detail::accumulate(tp, a, g); });
}

/// Columns [start, start + count) of a matrix.
inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "slice_cols");
  const std::size_t n = av.rows(), m = av.cols();
  if (count == 0 || start + count > m) {
    throw DimensionError("slice_cols: range out of bounds for " + shape_str(av.shape()));
  }
  Tensor out({n, count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, start + j);
  return a.tape()->record(std::move(out), "slice_cols", {a},
                          [a, n, m, start, count](Tape& tp, const Tensor&, const Tensor& g) {
                            Tensor& buf = tp.grad_buffer(a);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < count; ++j)
                                buf[i * m + start + j] += g[i * count + j];
                          });
}

/// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != n) throw DimensionError("concat_cols: row counts differ");
    total += p.value().cols();
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t c = p.value().cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out(i, off + j) = p.value()(i, j);
    off += c;
  }
  return parts.front().tape()->record(
      std::move(out), "concat_cols", parts, [parts, n, total](Tape& tp, const Tensor&, const Tensor& g) {
        std::size_t off = 0;
        for (const Var& p : parts) {
          const std::size_t c = p.value().cols();
          if (tp.needs_grad(p)) {
            Tensor& buf = tp.grad_buffer(p);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c; ++j) buf[i * c + j] += g[i * total + off + j];
          }
          off += c;
        }
      });
}

/// Flat concatenation of tensors of any shape into a vector.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> data;
  for (const Var& p : parts) data.insert(data.end(), p.value().vec().begin(), p.value().vec().end());
  const std::size_t total = data.size();
  return parts.front().tape()->record(Tensor({total}, std::move(data)), "concat", parts,
                                      [parts](Tape& tp, const Tensor&, const Tensor& g) {
                                        std::size_t off = 0;
                                        for (const Var& p : parts) {
                                          const std::size_t c = p.value().size();
                                          if (tp.needs_grad(p)) {
                                            Tensor& buf = tp.grad_buffer(p);
                                            for (std::size_t i = 0; i < c; ++i) buf[i] += g[off + i];
                                          }
                                          off += c;
                                        }
                                      });
}

/// Scalar at flat index i.
inline Var pick(const Var& a, std::size_t i) {
  if (i >= a.value().size()) throw DimensionError("pick: index out of range");
  return a.tape()->record(Tensor::scalar(a.value()[i]), "pick", {a},
                          [a, i](Tape& tp, const Tensor&, const Tensor& g) { tp.grad_buffer(a)[i] += g[0]; });
}

/// Row lookup table[ids[k], :] -> [ids.size() x cols].
inline Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
  const Tensor& tv = table.value();
  detail::require_matrix(tv, "gather_rows");
  const std::size_t m = tv.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor out({ids.size(), m});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= tv.rows()) {
      throw VocabularyError("gather_rows: id " + std::to_string(ids[k]) + " out of range " +
                            std::to_string(tv.rows()));
    }
    for (std::size_t j = 0; j < m; ++j) out(k, j) = tv(ids[k], j);
  }
  return table.tape()->record(std::move(out), "gather_rows", {table},
                              [table, ids, m](Tape& tp, const Tensor&, const Tensor& g) {
                                Tensor& buf = tp.grad_buffer(table);
                                for (std::size_t k = 0; k < ids.size(); ++k)
                                  for (std::size_t j = 0; j < m; ++j) buf[ids[k] * m + j] += g[k * m + j];
                              });
}

/// Weighted sum of scalars with constant weights.
inline Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& w) {
  if (xs.size() != w.size() || xs.empty()) throw DimensionError("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) s += w[k] * xs[k].item();
  return xs.front().tape()->record(Tensor::scalar(s), "weighted_sum", xs,
                                   [xs, w](Tape& tp, const Tensor&, const Tensor& g) {
                                     for (std::size_t k = 0; k < xs.size(); ++k)
                                       if (tp.needs_grad(xs[k])) tp.grad_buffer(xs[k])[0] += w[k] * g[0];
                                   });
}

}  // namespace dsd
