#pragma once

// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tape records every primitive in creation order; since operands always
// exist before their results, creation order is a topological order and
// backward() is a single reverse sweep. Every tensor is viewed as a matrix
// whose columns are the last extent and whose rows are the product of the
// leading extents. Binary elementwise primitives broadcast a single-row
// operand over the leading (batch) axis of the other and nothing else.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stg {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::size_t matrix_cols(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

inline std::size_t matrix_rows(const Shape& shape) {
  const std::size_t cols = matrix_cols(shape);
  return cols == 0 ? numel(Shape(shape.begin(), shape.end() - 1)) : numel(shape) / cols;
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Tensor {
public:
  Tensor() = default;

  const Shape& shape() const;
  const Mat& value() const;
  /// Gradient of the last backward() loss; zero when the node was unreachable.
  const Mat& grad() const;
  double item() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool defined() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Shape shape;
    Mat value;
    Mat grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf tensor. Rejects non-finite values.
  Tensor leaf(Mat value, Shape shape) {
    check_storage(value, shape, "leaf");
    if (!value.allFinite()) throw NumericError("leaf " + to_string(shape) + " holds non-finite values");
    return push(std::move(shape), std::move(value), {}, nullptr);
  }

  Tensor leaf(const Mat& value) {
    return leaf(value, Shape{static_cast<std::size_t>(value.rows()), static_cast<std::size_t>(value.cols())});
  }

  Tensor scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), Shape{});
  }

  /// Records a primitive result. The result must be finite; a non-finite
  /// result means an operand left the primitive's domain.
  Tensor record(Shape shape, Mat value, std::vector<std::size_t> parents, BackwardFn backward,
                const char* op) {
    check_storage(value, shape, op);
    if (!value.allFinite()) throw NumericError(std::string(op) + " produced non-finite values");
    return push(std::move(shape), std::move(value), std::move(parents), std::move(backward));
  }

  void backward(const Tensor& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    const Node& root = nodes_[loss.id()];
    if (numel(root.shape) != 1) throw ShapeError("backward: loss must be scalar, got " + to_string(root.shape));
    for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[loss.id()].grad(0, 0) = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
    has_grad_ = true;
  }

  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `delta` into the gradient of node `id`.
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& delta) {
    nodes_[id].grad += delta;
  }

  const Mat& grad_of(std::size_t id) const {
    if (!has_grad_) {
      zero_.setZero(nodes_[id].value.rows(), nodes_[id].value.cols());
      return zero_;
    }
    return nodes_[id].grad;
  }

private:
  static void check_storage(const Mat& value, const Shape& shape, const char* op) {
    if (static_cast<std::size_t>(value.rows()) != matrix_rows(shape) ||
        static_cast<std::size_t>(value.cols()) != matrix_cols(shape)) {
      throw ShapeError(std::string(op) + ": storage " + std::to_string(value.rows()) + "x" +
                       std::to_string(value.cols()) + " does not match shape " + to_string(shape));
    }
  }

  Tensor push(Shape shape, Mat value, std::vector<std::size_t> parents, BackwardFn backward) {
    nodes_.push_back(Node{std::move(shape), std::move(value), Mat(), std::move(parents), std::move(backward)});
    return Tensor(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool has_grad_ = false;
  mutable Mat zero_;
};

inline const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
inline const Mat& Tensor::value() const { return tape_->node(id_).value; }
inline const Mat& Tensor::grad() const { return tape_->grad_of(id_); }

inline double Tensor::item() const {
  if (numel(shape()) != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
  return value()(0, 0);
}

namespace detail {

inline Tape& same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

inline Tape& tape_of(const Tensor& a, const char* op) {
  if (!a.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
  return *a.tape();
}

enum class Broadcast { none, lhs, rhs };

// lhs/rhs: that operand is a single row stretched over the other's rows.
inline Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op, Shape& out) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    out = sa;
    return Broadcast::none;
  }
  const Mat& va = a.value();
  const Mat& vb = b.value();
  if (va.cols() == vb.cols() && va.rows() == 1 && sa.size() <= sb.size() && sb.size() >= 2) {
    out = sb;
    return Broadcast::lhs;
  }
  if (va.cols() == vb.cols() && vb.rows() == 1 && sb.size() <= sa.size() && sa.size() >= 2) {
    out = sa;
    return Broadcast::rhs;
  }
  throw ShapeError(std::string(op) + ": shapes " + to_string(sa) + " and " + to_string(sb) + " do not conform");
}

inline void reduce_into(Tape& t, std::size_t target, const Mat& g, bool reduce_rows) {
  if (reduce_rows)
    t.accumulate(target, g.colwise().sum());
  else
    t.accumulate(target, g);
}

template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
  Tape& tp = same_tape(a, b, op);
  Shape out;
  const Broadcast mode = broadcast_mode(a, b, op, out);
  const Mat& va = a.value();
  const Mat& vb = b.value();
  Mat result;
  if (mode == Broadcast::none) {
    result = fwd(va.array(), vb.array()).matrix();
  } else if (mode == Broadcast::lhs) {
    result = fwd(va.replicate(vb.rows(), 1).array(), vb.array()).matrix();
  } else {
    result = fwd(va.array(), vb.replicate(va.rows(), 1).array()).matrix();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tp.record(
      std::move(out), std::move(result), {ia, ib},
      [ia, ib, mode, bwd](Tape& t, std::size_t self) {
        const Mat& g = t.node(self).grad;
        const Mat& y = t.node(self).value;
        const auto rows = g.rows();
        const Mat xa = mode == Broadcast::lhs ? Mat(t.node(ia).value.replicate(rows, 1)) : t.node(ia).value;
        const Mat xb = mode == Broadcast::rhs ? Mat(t.node(ib).value.replicate(rows, 1)) : t.node(ib).value;
        Mat ga, gb;
        bwd(g.array(), xa.array(), xb.array(), y.array(), ga, gb);
        reduce_into(t, ia, ga, mode == Broadcast::lhs);
        reduce_into(t, ib, gb, mode == Broadcast::rhs);
      },
      op);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  Tape& tp = tape_of(a, op);
  Mat result = fwd(a.value().array()).matrix();
  const std::size_t ia = a.id();
  return tp.record(
      a.shape(), std::move(result), {ia},
      [ia, deriv](Tape& t, std::size_t self) {
        const auto& n = t.node(self);
        t.accumulate(ia, (n.grad.array() * deriv(t.node(ia).value.array(), n.value.array())).matrix());
      },
      op);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](const auto& x, const auto& y) { return x + y; },
      [](const auto& g, const auto&, const auto&, const auto&, Mat& ga, Mat& gb) {
        ga = g.matrix();
        gb = g.matrix();
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](const auto& x, const auto& y) { return x - y; },
      [](const auto& g, const auto&, const auto&, const auto&, Mat& ga, Mat& gb) {
        ga = g.matrix();
        gb = (-g).matrix();
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](const auto& x, const auto& y) { return x * y; },
      [](const auto& g, const auto& x, const auto& y, const auto&, Mat& ga, Mat& gb) {
        ga = (g * y).matrix();
        gb = (g * x).matrix();
      });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "div", [](const auto& x, const auto& y) { return x / y; },
      [](const auto& g, const auto&, const auto& y, const auto& out, Mat& ga, Mat& gb) {
        ga = (g / y).matrix();
        gb = (-g * out / y).matrix();
      });
}

/// a * factor, with a constant factor.
inline Tensor scale(const Tensor& a, double factor) {
  return detail::unary(
      a, "scale", [factor](const auto& x) { return x * factor; },
      [factor](const auto& x, const auto&) { return Arr::Constant(x.rows(), x.cols(), factor); });
}

/// a + offset, with a constant offset.
inline Tensor shift(const Tensor& a, double offset) {
  return detail::unary(
      a, "shift", [offset](const auto& x) { return x + offset; },
      [](const auto& x, const auto&) { return Arr::Ones(x.rows(), x.cols()); });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, "square", [](const auto& x) { return x * x; }, [](const auto& x, const auto&) { return 2.0 * x; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, "tanh", [](const auto& x) { return x.tanh(); }, [](const auto&, const auto& y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, "sigmoid", [](const auto& x) { return 1.0 / (1.0 + (-x).exp()); },
      [](const auto&, const auto& y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

inline Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) throw NumericError("log: non-positive operand");
  return detail::unary(
      a, "log", [](const auto& x) { return x.log(); }, [](const auto& x, const auto&) { return 1.0 / x; });
}

/// ln(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      a, "softplus",
      [](const auto& x) { return x.max(0.0) + (-x.abs()).exp().log1p(); },
      [](const auto& x, const auto&) { return 1.0 / (1.0 + (-x).exp()); });
}

inline Tensor sqrt(const Tensor& a) {
  if ((a.value().array() < 0.0).any()) throw NumericError("sqrt: negative operand");
  return detail::unary(
      a, "sqrt", [](const auto& x) { return x.sqrt(); }, [](const auto&, const auto& y) { return 0.5 / y; });
}

/// Positive part (x)_+. The subgradient at exactly 0 is 0.
inline Tensor hinge(const Tensor& a) {
  return detail::unary(
      a, "hinge", [](const auto& x) { return x.max(0.0); },
      [](const auto& x, const auto&) { return (x > 0.0).template cast<double>(); });
}

/// [..., k] x [k, n] -> [..., n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tp = detail::same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[0]) {
    throw ShapeError("matmul: shapes " + to_string(sa) + " and " + to_string(sb) + " do not conform");
  }
  Shape out = sa;
  out.back() = sb[1];
  Mat result = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return tp.record(
      std::move(out), std::move(result), {ia, ib},
      [ia, ib](Tape& t, std::size_t self) {
        const Mat& g = t.node(self).grad;
        t.accumulate(ia, g * t.node(ib).value.transpose());
        t.accumulate(ib, t.node(ia).value.transpose() * g);
      },
      "matmul");
}

/// Concatenates along the last axis; leading extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& tp = detail::tape_of(parts.front(), "concat");
  Shape lead(parts.front().shape().begin(), parts.front().shape().end() - (parts.front().shape().empty() ? 0 : 1));
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  for (const Tensor& p : parts) {
    if (p.tape() != &tp) throw std::invalid_argument("concat: operands on different tapes");
    const Shape& s = p.shape();
    if (s.empty() || Shape(s.begin(), s.end() - 1) != lead) {
      throw ShapeError("concat: shapes " + to_string(parts.front().shape()) + " and " + to_string(s) +
                       " do not conform");
    }
    ids.push_back(p.id());
    widths.push_back(s.back());
    cols += s.back();
  }
  const auto rows = parts.front().value().rows();
  Mat result(rows, static_cast<Eigen::Index>(cols));
  Eigen::Index offset = 0;
  for (const Tensor& p : parts) {
    result.middleCols(offset, p.value().cols()) = p.value();
    offset += p.value().cols();
  }
  Shape out = lead;
  out.push_back(cols);
  return tp.record(
      std::move(out), std::move(result), ids,
      [ids, widths](Tape& t, std::size_t self) {
        const Mat& g = t.node(self).grad;
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto w = static_cast<Eigen::Index>(widths[i]);
          t.accumulate(ids[i], g.middleCols(off, w));
          off += w;
        }
      },
      "concat");
}

inline Tensor concat(std::initializer_list<Tensor> parts) { return concat(std::vector<Tensor>(parts)); }

/// Columns [begin, end) of the last axis.
inline Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  Tape& tp = detail::tape_of(a, "slice");
  const Shape& s = a.shape();
  if (s.empty() || begin > end || end > s.back()) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     to_string(s));
  }
  Shape out = s;
  out.back() = end - begin;
  const auto b = static_cast<Eigen::Index>(begin);
  const auto w = static_cast<Eigen::Index>(end - begin);
  Mat result = a.value().middleCols(b, w);
  const std::size_t ia = a.id();
  return tp.record(
      std::move(out), std::move(result), {ia},
      [ia, b, w](Tape& t, std::size_t self) { t.node(ia).grad.middleCols(b, w) += t.node(self).grad; },
      "slice");
}

inline Tensor sum(const Tensor& a) {
  Tape& tp = detail::tape_of(a, "sum");
  Mat result(1, 1);
  result(0, 0) = a.value().sum();
  const std::size_t ia = a.id();
  return tp.record(
      Shape{}, std::move(result), {ia},
      [ia](Tape& t, std::size_t self) { t.node(ia).grad.array() += t.node(self).grad(0, 0); }, "sum");
}

inline Tensor mean(const Tensor& a) {
  const std::size_t n = numel(a.shape());
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Sums the last axis, keeping it with extent 1.
inline Tensor sum_last(const Tensor& a) {
  Tape& tp = detail::tape_of(a, "sum_last");
  if (a.shape().empty()) throw ShapeError("sum_last: scalar operand");
  Shape out = a.shape();
  out.back() = 1;
  Mat result = a.value().rowwise().sum();
  const std::size_t ia = a.id();
  return tp.record(
      std::move(out), std::move(result), {ia},
      [ia](Tape& t, std::size_t self) {
        auto& target = t.node(ia).grad;
        target += t.node(self).grad.replicate(1, target.cols());
      },
      "sum_last");
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

/// Largest |analytic - central difference| / max(1, |analytic|) over the
/// entries of `point`. `fn` must build a scalar on the tape it is given.
inline double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn, const Mat& point,
                         const Shape& shape, double step) {
  if (!(step > 0.0 && step <= 1e-3)) throw std::invalid_argument("grad_check: step must lie in (0, 1e-3]");
  Mat analytic;
  {
    Tape tape;
    Tensor x = tape.leaf(point, shape);
    Tensor loss = fn(tape, x);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: function value is non-finite");
    tape.backward(loss);
    analytic = x.grad();
  }
  auto eval = [&](const Mat& p) {
    Tape tape;
    const double v = fn(tape, tape.leaf(p, shape)).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function value is non-finite");
    return v;
  };
  double worst = 0.0;
  Mat probe = point;
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = eval(probe);
    probe.data()[i] = orig - step;
    const double down = eval(probe);
    probe.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace stg
