#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every operation of one forward pass. Values are cheap
// handles (tape pointer + node index). Calling backward() on a 1x1 Value
// walks the record in reverse and accumulates gradients into every node
// that requires them and into any bound Parameter. Gradients accumulate
// (+=) across backward calls; zero_grads() / Parameter::zero_grad() reset.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slidegcd/error.hpp"
#include "slidegcd/matrix.hpp"

namespace slidegcd {

// Trainable tensor that outlives individual tapes.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

class Value {
 public:
  Value() = default;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& data() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return data().rows(); }
  std::size_t cols() const { return data().cols(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Work = std::vector<Matrix>;
  // Receives the upstream gradient of node `self` and adds contributions to
  // the parents' slots in `work`.
  using BackwardFn = std::function<void(const Tape&, std::size_t self, const Matrix& upstream, Work&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Value constant(Matrix m) { return push(std::move(m), false, {}, nullptr, nullptr); }
  Value variable(Matrix m) { return push(std::move(m), true, {}, nullptr, nullptr); }
  // Leaf whose gradient is also accumulated into p.grad on backward.
  Value param(Parameter& p) { return push(p.value, true, {}, nullptr, &p); }

  Value record(Matrix out, std::vector<std::size_t> parents, BackwardFn fn) {
    bool rg = false;
    for (auto p : parents) rg = rg || nodes_.at(p).requires_grad;
    return push(std::move(out), rg, std::move(parents), rg ? std::move(fn) : BackwardFn{}, nullptr);
  }

  const Matrix& data(std::size_t id) const { return nodes_.at(id).data; }
  const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(const Value& loss) {
    check_owner(loss);
    const Matrix& l = data(loss.id());
    if (l.rows() != 1 || l.cols() != 1) {
      throw Error(ErrorCode::NotScalar, "backward from " + l.shape_str() + " value");
    }
    if (!requires_grad(loss.id())) return;

    Work work(nodes_.size());
    work[loss.id()] = Matrix(1, 1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (work[i].empty() || !node.requires_grad || !node.backward) continue;
      node.backward(*this, i, work[i], work);
    }
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      if (work[i].empty() || !nodes_[i].requires_grad) continue;
      nodes_[i].grad += work[i];
      if (nodes_[i].param != nullptr) nodes_[i].param->grad += work[i];
    }
  }

  void zero_grads() {
    for (auto& n : nodes_) n.grad.fill(0.0);
  }

  void check_owner(const Value& v) const {
    if (v.tape() != this) throw Error(ErrorCode::InvalidValue, "value belongs to a different tape");
  }

  // Adds `contrib` into work[parent] when that parent participates in backward.
  static void accumulate(const Tape& t, Work& work, std::size_t parent, const Matrix& contrib) {
    if (!t.requires_grad(parent)) return;
    if (work[parent].empty()) {
      work[parent] = contrib;
    } else {
      work[parent] += contrib;
    }
  }

 private:
  struct Node {
    Matrix data;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Value push(Matrix m, bool rg, std::vector<std::size_t> parents, BackwardFn fn, Parameter* p) {
    Node n;
    n.grad = Matrix(m.rows(), m.cols());
    n.data = std::move(m);
    n.requires_grad = rg;
    n.parents = std::move(parents);
    n.backward = std::move(fn);
    n.param = p;
    nodes_.push_back(std::move(n));
    return Value(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Matrix& Value::data() const { return tape_->data(id_); }
inline const Matrix& Value::grad() const { return tape_->grad(id_); }
inline bool Value::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& same_tape(const Value& a, const Value& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw Error(ErrorCode::InvalidValue, "operands live on different tapes");
  }
  return *a.tape();
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
  }
}

inline void require_nonempty(const Matrix& x, const char* op) {
  if (x.empty()) throw Error(ErrorCode::EmptyInput, std::string(op) + " of empty matrix");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Value matmul(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b);
  Matrix out = matmul(a.data(), b.data());
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
                    if (tp.requires_grad(ia)) Tape::accumulate(tp, w, ia, matmul_nt(g, tp.data(ib)));
                    if (tp.requires_grad(ib)) Tape::accumulate(tp, w, ib, matmul_tn(tp.data(ia), g));
                  });
}

inline Value transpose(const Value& x) {
  Tape& t = *x.tape();
  const auto ix = x.id();
  return t.record(x.data().transposed(), {ix},
                  [ix](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
                    Tape::accumulate(tp, w, ix, g.transposed());
                  });
}

// ---------------------------------------------------------------------------
// Elementwise unary

enum class UnaryKind { Relu, LeakyRelu, Sigmoid, Tanh, Log, Exp, Negate };

inline constexpr double kDefaultLeakySlope = 0.01;

inline Value apply_unary(UnaryKind kind, const Value& x, double alpha = kDefaultLeakySlope) {
  Tape& t = *x.tape();
  const Matrix& in = x.data();
  Matrix out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    switch (kind) {
      case UnaryKind::Relu: out[i] = v > 0.0 ? v : 0.0; break;
      case UnaryKind::LeakyRelu: out[i] = v > 0.0 ? v : alpha * v; break;
      case UnaryKind::Sigmoid:
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case UnaryKind::Tanh: out[i] = std::tanh(v); break;
      case UnaryKind::Log:
        if (!(v > 0.0)) throw Error(ErrorCode::DomainError, "log of non-positive entry");
        out[i] = std::log(v);
        break;
      case UnaryKind::Exp: out[i] = std::exp(v); break;
      case UnaryKind::Negate: out[i] = -v; break;
    }
  }
  const auto ix = x.id();
  return t.record(std::move(out), {ix},
                  [ix, kind, alpha](const Tape& tp, std::size_t self, const Matrix& g, Tape::Work& w) {
                    const Matrix& in = tp.data(ix);
                    const Matrix& y = tp.data(self);
                    Matrix d(g.rows(), g.cols());
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      double deriv = 0.0;
                      switch (kind) {
                        case UnaryKind::Relu: deriv = in[i] > 0.0 ? 1.0 : 0.0; break;
                        case UnaryKind::LeakyRelu: deriv = in[i] > 0.0 ? 1.0 : alpha; break;
                        case UnaryKind::Sigmoid: deriv = y[i] * (1.0 - y[i]); break;
                        case UnaryKind::Tanh: deriv = 1.0 - y[i] * y[i]; break;
                        case UnaryKind::Log: deriv = 1.0 / in[i]; break;
                        case UnaryKind::Exp: deriv = y[i]; break;
                        case UnaryKind::Negate: deriv = -1.0; break;
                      }
                      d[i] = g[i] * deriv;
                    }
                    Tape::accumulate(tp, w, ix, d);
                  });
}

inline Value relu(const Value& x) { return apply_unary(UnaryKind::Relu, x); }
inline Value leaky_relu(const Value& x, double alpha = kDefaultLeakySlope) {
  return apply_unary(UnaryKind::LeakyRelu, x, alpha);
}
inline Value sigmoid(const Value& x) { return apply_unary(UnaryKind::Sigmoid, x); }
inline Value tanh(const Value& x) { return apply_unary(UnaryKind::Tanh, x); }
inline Value log(const Value& x) { return apply_unary(UnaryKind::Log, x); }
inline Value exp(const Value& x) { return apply_unary(UnaryKind::Exp, x); }
inline Value negate(const Value& x) { return apply_unary(UnaryKind::Negate, x); }

// y = s * x
inline Value scale(const Value& x, double s) {
  Tape& t = *x.tape();
  const auto ix = x.id();
  return t.record(x.data() * s, {ix}, [ix, s](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    Tape::accumulate(tp, w, ix, g * s);
  });
}

// y = x + s (entrywise)
inline Value add_scalar(const Value& x, double s) {
  Tape& t = *x.tape();
  Matrix out = x.data();
  for (auto& v : out.values()) v += s;
  const auto ix = x.id();
  return t.record(std::move(out), {ix}, [ix](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    Tape::accumulate(tp, w, ix, g);
  });
}

// Same data, cut from the gradient graph.
inline Value detach(const Value& x) { return x.tape()->constant(x.data()); }

// ---------------------------------------------------------------------------
// Elementwise binary

enum class BinaryKind { Add, Sub, Hadamard };

inline Value apply_binary(BinaryKind kind, const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.data(), b.data(), "apply_binary");
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case BinaryKind::Add: out[i] = x[i] + y[i]; break;
      case BinaryKind::Sub: out[i] = x[i] - y[i]; break;
      case BinaryKind::Hadamard: out[i] = x[i] * y[i]; break;
    }
  }
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib},
                  [ia, ib, kind](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
                    switch (kind) {
                      case BinaryKind::Add:
                        Tape::accumulate(tp, w, ia, g);
                        Tape::accumulate(tp, w, ib, g);
                        break;
                      case BinaryKind::Sub:
                        Tape::accumulate(tp, w, ia, g);
                        if (tp.requires_grad(ib)) Tape::accumulate(tp, w, ib, g * -1.0);
                        break;
                      case BinaryKind::Hadamard: {
                        const Matrix& x = tp.data(ia);
                        const Matrix& y = tp.data(ib);
                        if (tp.requires_grad(ia)) {
                          Matrix d = g;
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i];
                          Tape::accumulate(tp, w, ia, d);
                        }
                        if (tp.requires_grad(ib)) {
                          Matrix d = g;
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= x[i];
                          Tape::accumulate(tp, w, ib, d);
                        }
                        break;
                      }
                    }
                  });
}

inline Value add(const Value& a, const Value& b) { return apply_binary(BinaryKind::Add, a, b); }
inline Value sub(const Value& a, const Value& b) { return apply_binary(BinaryKind::Sub, a, b); }
inline Value hadamard(const Value& a, const Value& b) { return apply_binary(BinaryKind::Hadamard, a, b); }

// x[m x n] + bias[1 x n] broadcast over rows.
inline Value add_bias(const Value& x, const Value& bias) {
  Tape& t = detail::same_tape(x, bias);
  const Matrix& in = x.data();
  const Matrix& b = bias.data();
  if (b.rows() != 1 || b.cols() != in.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "add_bias " + in.shape_str() + " + " + b.shape_str());
  }
  Matrix out = in;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
  const auto ix = x.id(), ib = bias.id();
  return t.record(std::move(out), {ix, ib}, [ix, ib](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    Tape::accumulate(tp, w, ix, g);
    if (tp.requires_grad(ib)) {
      Matrix db(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) db(0, j) += g(i, j);
      Tape::accumulate(tp, w, ib, db);
    }
  });
}

// 1x1 -> rows x cols filled with the scalar.
inline Value broadcast(const Value& s, std::size_t rows, std::size_t cols) {
  Tape& t = *s.tape();
  if (s.rows() != 1 || s.cols() != 1) throw Error(ErrorCode::NotScalar, "broadcast of non-scalar");
  const auto is = s.id();
  return t.record(Matrix(rows, cols, s.data()(0, 0)), {is},
                  [is](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
                    double sum = 0.0;
                    for (double v : g.values()) sum += v;
                    Tape::accumulate(tp, w, is, Matrix(1, 1, sum));
                  });
}

// ---------------------------------------------------------------------------
// Row softmax (max-subtracted).

inline Matrix softmax_rows(const Matrix& in) {
  if (!in.all_finite()) throw Error(ErrorCode::NonFiniteInput, "softmax_rows input");
  Matrix out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    auto r = in.row(i);
    auto o = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) z += (o[j] = std::exp(r[j] - mx));
    for (double& v : o) v /= z;
  }
  return out;
}

inline Value softmax_rows(const Value& x) {
  Tape& t = *x.tape();
  const auto ix = x.id();
  return t.record(softmax_rows(x.data()), {ix}, [ix](const Tape& tp, std::size_t self, const Matrix& g, Tape::Work& w) {
    const Matrix& y = tp.data(self);
    Matrix d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
    }
    Tape::accumulate(tp, w, ix, d);
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Value concat_cols(std::span<const Value> parts) {
  if (parts.empty()) throw Error(ErrorCode::EmptyInput, "concat_cols of no parts");
  Tape& t = *parts.front().tape();
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != m) {
      throw Error(ErrorCode::DimensionMismatch, "concat_cols row counts differ");
    }
    total += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(m, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Matrix& d = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d.cols(); ++j) out(i, off + j) = d(i, j);
    off += d.cols();
  }
  return t.record(std::move(out), ids, [ids](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t c = tp.data(id).cols();
      if (tp.requires_grad(id)) Tape::accumulate(tp, w, id, g.block(0, g.rows(), off, off + c));
      off += c;
    }
  });
}

inline Value concat_cols(std::initializer_list<Value> parts) {
  return concat_cols(std::span<const Value>(parts.begin(), parts.size()));
}

inline Value concat_rows(std::span<const Value> parts) {
  if (parts.empty()) throw Error(ErrorCode::EmptyInput, "concat_rows of no parts");
  Tape& t = *parts.front().tape();
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.cols() != n) throw Error(ErrorCode::DimensionMismatch, "concat_rows column counts differ");
    total += p.rows();
    ids.push_back(p.id());
  }
  Matrix out(total, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.data().values();
    std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(off * n));
    off += p.rows();
  }
  return t.record(std::move(out), ids, [ids](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t r = tp.data(id).rows();
      if (tp.requires_grad(id)) Tape::accumulate(tp, w, id, g.block(off, off + r, 0, g.cols()));
      off += r;
    }
  });
}

inline Value concat_rows(std::initializer_list<Value> parts) {
  return concat_rows(std::span<const Value>(parts.begin(), parts.size()));
}

// Copy of x[r0:r1, c0:c1].
inline Value slice(const Value& x, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  Tape& t = *x.tape();
  Matrix out = x.data().block(r0, r1, c0, c1);
  const auto ix = x.id();
  const std::size_t rows = x.rows(), cols = x.cols();
  return t.record(std::move(out), {ix},
                  [ix, r0, c0, rows, cols](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
                    Matrix d(rows, cols);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) d(r0 + i, c0 + j) = g(i, j);
                    Tape::accumulate(tp, w, ix, d);
                  });
}

inline Value slice_rows(const Value& x, std::size_t r0, std::size_t r1) {
  return slice(x, r0, r1, 0, x.cols());
}

// out[i] = x[i, index[i]], shape B x 1.
inline Value gather(const Value& x, std::span<const int> index) {
  Tape& t = *x.tape();
  const Matrix& in = x.data();
  if (index.size() != in.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "gather index count != rows");
  }
  Matrix out(in.rows(), 1);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= in.cols()) {
      throw Error(ErrorCode::IndexOutOfRange, "gather column " + std::to_string(index[i]));
    }
    out(i, 0) = in(i, static_cast<std::size_t>(index[i]));
  }
  const auto ix = x.id();
  std::vector<int> idx(index.begin(), index.end());
  const std::size_t cols = in.cols();
  return t.record(std::move(out), {ix}, [ix, idx, cols](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    Matrix d(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) d(i, static_cast<std::size_t>(idx[i])) = g(i, 0);
    Tape::accumulate(tp, w, ix, d);
  });
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceKind { SumAll, MeanAll, MeanRows };

inline Value reduce(ReduceKind kind, const Value& x) {
  Tape& t = *x.tape();
  const Matrix& in = x.data();
  detail::require_nonempty(in, "reduce");
  const std::size_t m = in.rows(), n = in.cols();
  Matrix out;
  switch (kind) {
    case ReduceKind::SumAll:
    case ReduceKind::MeanAll: {
      double s = 0.0;
      for (double v : in.values()) s += v;
      if (kind == ReduceKind::MeanAll) s /= static_cast<double>(in.size());
      out = Matrix(1, 1, s);
      break;
    }
    case ReduceKind::MeanRows: {
      out = Matrix(1, n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(0, j) += in(i, j);
      out *= 1.0 / static_cast<double>(m);
      break;
    }
  }
  const auto ix = x.id();
  return t.record(std::move(out), {ix}, [ix, kind, m, n](const Tape& tp, std::size_t, const Matrix& g, Tape::Work& w) {
    Matrix d(m, n);
    switch (kind) {
      case ReduceKind::SumAll: d.fill(g(0, 0)); break;
      case ReduceKind::MeanAll: d.fill(g(0, 0) / static_cast<double>(m * n)); break;
      case ReduceKind::MeanRows:
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) d(i, j) = g(0, j) / static_cast<double>(m);
        break;
    }
    Tape::accumulate(tp, w, ix, d);
  });
}

inline Value sum_all(const Value& x) { return reduce(ReduceKind::SumAll, x); }
inline Value mean_all(const Value& x) { return reduce(ReduceKind::MeanAll, x); }
inline Value mean_rows(const Value& x) { return reduce(ReduceKind::MeanRows, x); }

}  // namespace slidegcd
