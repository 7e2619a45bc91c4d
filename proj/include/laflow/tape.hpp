#pragma once
// Reverse-mode differentiation over dense Eigen matrices.
//
// A tape records every primitive in execution order. Each node owns its
// forward value and, once backward() runs, its adjoint. Parent ids are always
// smaller than the child id, so the record is a DAG by construction and the
// backward sweep is a single reverse pass over the node list.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace laflow {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

template <typename Scalar>
struct BasicParameter {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  BasicParameter() = default;
  BasicParameter(std::string n, MatrixX<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(MatrixX<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class BasicTape;

template <typename Scalar>
class BasicVar {
 public:
  using Matrix = MatrixX<Scalar>;

  BasicVar() = default;
  BasicVar(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const { return tape_->value(id_); }
  const Matrix& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }

  BasicTape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  using Parameter = BasicParameter<Scalar>;
  // (tape, upstream adjoint, id of the node being differentiated)
  using Backward = std::function<void(BasicTape&, const Matrix&, std::size_t)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr, {}); }
  Var constant_scalar(Scalar s) { return constant(Matrix::Constant(1, 1, s)); }

  Var param(Parameter& p) { return push(p.value, true, &p, {}); }

  // Differentiable leaf that is not a parameter; its adjoint is read back via Var::grad().
  Var variable(Matrix value) { return push(std::move(value), true, nullptr, {}); }

  template <typename Parents>
  Var record(Matrix value, const Parents& parents, Backward back) {
    bool needs = false;
    for (const Var& p : parents) {
      assert(p.tape() == this && p.id() < nodes_.size());
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(back) : Backward{});
  }

  Var record(Matrix value, std::initializer_list<Var> parents, Backward back) {
    return record<std::initializer_list<Var>>(std::move(value), parents, std::move(back));
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }

  const Matrix& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      zero_scratch_ = Matrix::Zero(n.value.rows(), n.value.cols());
      return zero_scratch_;
    }
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Sweeps adjoints from a scalar loss back to every leaf in exact reverse
  // recording order, then adds parameter adjoints into BasicParameter::grad.
  void backward(const Var& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss recorded on another tape");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward: loss must be a 1x1 scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id()].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.back) n.back(*this, n.grad, i);
      if (n.param != nullptr) {
        if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols()) {
          n.param->zero_grad();
        }
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward back;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool requires_grad, Parameter* param, Backward back) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(back), param, requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  mutable Matrix zero_scratch_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

template <typename Scalar>
BasicTape<Scalar>& tape_of(const BasicVar<Scalar>& a) {
  assert(a.valid());
  return *a.tape();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
BasicVar<Scalar> matmul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b},
                  [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                  });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b},
                  [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    t.accumulate(ia, g);
                    t.accumulate(ib, g);
                  });
}

template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b},
                  [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    t.accumulate(ia, g);
                    t.accumulate(ib, -g);
                  });
}

template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(-a.value(), {a},
                  [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) { t.accumulate(ia, -g); });
}

template <typename Scalar>
BasicVar<Scalar> operator*(Scalar s, const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(s * a.value(), {a},
                  [ia, s](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) { t.accumulate(ia, s * g); });
}

template <typename Scalar>
BasicVar<Scalar> add_scalar(const BasicVar<Scalar>& a, Scalar s) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record((a.value().array() + s).matrix(), {a},
                  [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) { t.accumulate(ia, g); });
}

// Adds a 1 x n row to every row of a.
template <typename Scalar>
BasicVar<Scalar> add_rowwise(const BasicVar<Scalar>& a, const BasicVar<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_rowwise: row shape mismatch");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id(), ir = row.id();
  MatrixX<Scalar> out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row},
                  [ia, ir](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    t.accumulate(ia, g);
                    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
                  });
}

// Multiplies row i of a by s(i, 0).
template <typename Scalar>
BasicVar<Scalar> scale_rows(const BasicVar<Scalar>& a, const BasicVar<Scalar>& s) {
  if (s.cols() != 1 || s.rows() != a.rows()) throw std::invalid_argument("scale_rows: scale must be rows x 1");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id(), is = s.id();
  MatrixX<Scalar> out = s.value().col(0).asDiagonal() * a.value();
  return t.record(std::move(out), {a, s},
                  [ia, is](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    if (t.requires_grad(ia)) t.accumulate(ia, t.value(is).col(0).asDiagonal() * g);
                    if (t.requires_grad(is)) t.accumulate(is, g.cwiseProduct(t.value(ia)).rowwise().sum());
                  });
}

template <typename Scalar>
BasicVar<Scalar> cwise_product(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "cwise_product");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {a, b},
                  [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Scalar>
BasicVar<Scalar> sigmoid(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  MatrixX<Scalar> y = (Scalar(1) + (-a.value().array()).exp()).inverse().matrix();
  return t.record(std::move(y), {a}, [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t self) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (g.array() * y * (Scalar(1) - y)).matrix());
  });
}

template <typename Scalar>
BasicVar<Scalar> tanh(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  MatrixX<Scalar> y = a.value().array().tanh().matrix();
  return t.record(std::move(y), {a}, [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t self) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (g.array() * (Scalar(1) - y * y)).matrix());
  });
}

// x * sigmoid(x)
template <typename Scalar>
BasicVar<Scalar> silu(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  // The sigmoid is kept for the backward pass; one vectorized exp per element.
  MatrixX<Scalar> s = (Scalar(1) + (-a.value().array()).exp()).inverse().matrix();
  MatrixX<Scalar> y = a.value().cwiseProduct(s);
  return t.record(std::move(y), {a}, [ia, s = std::move(s)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
    const auto x = t.value(ia).array();
    t.accumulate(ia, (g.array() * s.array() * (Scalar(1) + x * (Scalar(1) - s.array()))).matrix());
  });
}

template <typename Scalar>
BasicVar<Scalar> exp(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  MatrixX<Scalar> y = a.value().array().exp().matrix();
  return t.record(std::move(y), {a}, [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t self) {
    t.accumulate(ia, g.cwiseProduct(t.value(self)));
  });
}

template <typename Scalar>
BasicVar<Scalar> square(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().array().square().matrix(), {a},
                  [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    t.accumulate(ia, Scalar(2) * g.cwiseProduct(t.value(ia)));
                  });
}

// Gradient passes only where lo < x < hi.
template <typename Scalar>
BasicVar<Scalar> clamp(const BasicVar<Scalar>& a, Scalar lo, Scalar hi) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  MatrixX<Scalar> y = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(y), {a}, [ia, lo, hi](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
    const auto& x = t.value(ia).array();
    t.accumulate(ia, (g.array() * ((x > lo) && (x < hi)).template cast<Scalar>()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(MatrixX<Scalar>::Constant(1, 1, a.value().sum()), {a},
                  [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    const auto& x = t.value(ia);
                    t.accumulate(ia, MatrixX<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
                  });
}

template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  return (Scalar(1) / n) * sum(a);
}

// Row-wise sum: (r x c) -> (r x 1).
template <typename Scalar>
BasicVar<Scalar> row_sum(const BasicVar<Scalar>& a) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().rowwise().sum(), {a}, [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
    const auto& x = t.value(ia);
    t.accumulate(ia, g.col(0).replicate(1, x.cols()));
  });
}

// Mean over consecutive groups of `group` rows: (n*group x c) -> (n x c).
template <typename Scalar>
BasicVar<Scalar> group_mean_rows(const BasicVar<Scalar>& a, Index group) {
  if (group <= 0 || a.rows() % group != 0) throw std::invalid_argument("group_mean_rows: rows not divisible by group");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  const Index n = a.rows() / group;
  MatrixX<Scalar> out(n, a.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  return t.record(std::move(out), {a}, [ia, group, n](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
    const auto& x = t.value(ia);
    MatrixX<Scalar> d(x.rows(), x.cols());
    for (Index i = 0; i < n; ++i) d.middleRows(i * group, group) = (g.row(i) / Scalar(group)).replicate(group, 1);
    t.accumulate(ia, d);
  });
}

// Max over consecutive groups of `group` rows; the adjoint goes to the first
// arg-max of each column.
template <typename Scalar>
BasicVar<Scalar> group_max_rows(const BasicVar<Scalar>& a, Index group) {
  if (group <= 0 || a.rows() % group != 0) throw std::invalid_argument("group_max_rows: rows not divisible by group");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  const Index n = a.rows() / group;
  const Index c = a.cols();
  MatrixX<Scalar> out(n, c);
  std::vector<Index> argmax(static_cast<std::size_t>(n * c));
  const auto& x = a.value();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < c; ++j) {
      Index best = i * group;
      for (Index r = i * group + 1; r < (i + 1) * group; ++r) {
        if (x(r, j) > x(best, j)) best = r;
      }
      out(i, j) = x(best, j);
      argmax[static_cast<std::size_t>(i * c + j)] = best;
    }
  }
  return t.record(std::move(out), {a},
                  [ia, n, c, argmax = std::move(argmax)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    const auto& x = t.value(ia);
                    MatrixX<Scalar> d = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                    for (Index i = 0; i < n; ++i)
                      for (Index j = 0; j < c; ++j) d(argmax[static_cast<std::size_t>(i * c + j)], j) += g(i, j);
                    t.accumulate(ia, d);
                  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
BasicVar<Scalar> concat_cols(const std::vector<BasicVar<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  auto& t = detail::tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.cols();
  }
  MatrixX<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return t.record(std::move(out), parts,
                  [layout = std::move(layout)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    for (const auto& [id, off] : layout) {
                      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(off, t.value(id).cols()));
                    }
                  });
}

template <typename Scalar>
BasicVar<Scalar> concat_rows(const std::vector<BasicVar<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  auto& t = detail::tape_of(parts.front());
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.rows();
  }
  MatrixX<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.rows();
  }
  return t.record(std::move(out), parts,
                  [layout = std::move(layout)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    for (const auto& [id, off] : layout) {
                      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(off, t.value(id).rows()));
                    }
                  });
}

template <typename Scalar>
BasicVar<Scalar> slice_cols(const BasicVar<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols: range outside matrix");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().middleCols(start, count), {a},
                  [ia, start, count](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    const auto& x = t.value(ia);
                    MatrixX<Scalar> d = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                    d.middleCols(start, count) = g;
                    t.accumulate(ia, d);
                  });
}

template <typename Scalar>
BasicVar<Scalar> slice_rows(const BasicVar<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows: range outside matrix");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().middleRows(start, count), {a},
                  [ia, start, count](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    const auto& x = t.value(ia);
                    MatrixX<Scalar> d = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                    d.middleRows(start, count) = g;
                    t.accumulate(ia, d);
                  });
}

// out.row(i) = a.row(index[i]); adjoints scatter-add back.
template <typename Scalar>
BasicVar<Scalar> gather_rows(const BasicVar<Scalar>& a, std::vector<Index> index) {
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  MatrixX<Scalar> out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw std::out_of_range("gather_rows: index outside matrix");
    out.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  return t.record(std::move(out), {a},
                  [ia, index = std::move(index)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
                    const auto& x = t.value(ia);
                    MatrixX<Scalar> d = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                    for (std::size_t i = 0; i < index.size(); ++i) d.row(index[i]) += g.row(static_cast<Index>(i));
                    t.accumulate(ia, d);
                  });
}

// Repeats a (1 x c) row n times.
template <typename Scalar>
BasicVar<Scalar> repeat_row(const BasicVar<Scalar>& a, Index n) {
  if (a.rows() != 1) throw std::invalid_argument("repeat_row: input must be a single row");
  return gather_rows(a, std::vector<Index>(static_cast<std::size_t>(n), 0));
}

// Row-major reshape (r x c) -> (new_rows x new_cols): element order within a
// row-major traversal is preserved.
template <typename Scalar>
BasicVar<Scalar> reshape_rowmajor(const BasicVar<Scalar>& a, Index new_rows, Index new_cols) {
  if (new_rows * new_cols != a.value().size()) throw std::invalid_argument("reshape_rowmajor: size mismatch");
  auto& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  MatrixX<Scalar> out = Eigen::Map<RowMajor>(src.data(), new_rows, new_cols);
  return t.record(std::move(out), {a}, [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, std::size_t) {
    const auto& x = t.value(ia);
    RowMajor gr = g;
    MatrixX<Scalar> d = Eigen::Map<RowMajor>(gr.data(), x.rows(), x.cols());
    t.accumulate(ia, d);
  });
}

// Value copy with no path back to its input.
template <typename Scalar>
BasicVar<Scalar> stop_gradient(const BasicVar<Scalar>& a) {
  return detail::tape_of(a).constant(a.value());
}

// ---------------------------------------------------------------------------

using Parameter = BasicParameter<double>;
using Tape = BasicTape<double>;
using Var = BasicVar<double>;
using Matrix = MatrixX<double>;
using ParamList = std::vector<Parameter*>;

}  // namespace laflow
