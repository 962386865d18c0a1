#pragma once

// Graph branch: two hypergraph convolutions, hop concatenation, centering
// channel attention and the MLP node classifier.

#include <string>
#include <vector>

#include "slidegcd/autodiff.hpp"

namespace slidegcd {

// How Centering(A) subtracts the mean of the attention map A (3*D_S x n).
enum class CenteringMode {
  Global,      // scalar mean over all entries
  PerChannel,  // mean of each row of A
  PerNode,     // mean of each column of A
};

struct GcnParams {
  Parameter theta1;  // D_S x D_S
  Parameter theta2;  // D_S x D_S
  Parameter w0;      // L x L
  Parameter w1;      // L x L
  Parameter mlp1_w;  // 3 D_S x D_m
  Parameter mlp1_b;  // 1 x D_m
  Parameter mlp2_w;  // D_m x C
  Parameter mlp2_b;  // 1 x C

  template <class Rng>
  static GcnParams init(std::size_t d_s, std::size_t capacity, std::size_t d_m, std::size_t classes, Rng& rng) {
    GcnParams p;
    p.theta1 = Parameter("gcn.theta1", Matrix::glorot(d_s, d_s, rng));
    p.theta2 = Parameter("gcn.theta2", Matrix::glorot(d_s, d_s, rng));
    p.w0 = Parameter("gcn.w0", Matrix::glorot(capacity, capacity, rng));
    p.w1 = Parameter("gcn.w1", Matrix::glorot(capacity, capacity, rng));
    p.mlp1_w = Parameter("gcn.mlp1_w", Matrix::glorot(3 * d_s, d_m, rng));
    p.mlp1_b = Parameter("gcn.mlp1_b", Matrix(1, d_m));
    p.mlp2_w = Parameter("gcn.mlp2_w", Matrix::glorot(d_m, classes, rng));
    p.mlp2_b = Parameter("gcn.mlp2_b", Matrix(1, classes));
    return p;
  }

  std::size_t capacity() const { return w0.value.rows(); }

  std::vector<Parameter*> all() { return {&theta1, &theta2, &w0, &w1, &mlp1_w, &mlp1_b, &mlp2_w, &mlp2_b}; }
  std::vector<const Parameter*> all() const {
    return {&theta1, &theta2, &w0, &w1, &mlp1_w, &mlp1_b, &mlp2_w, &mlp2_b};
  }
};

struct BoundGcn {
  Value theta1, theta2, w0, w1, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
  std::size_t capacity = 0;
};

inline BoundGcn bind(Tape& t, GcnParams& p) {
  return {t.param(p.theta1), t.param(p.theta2), t.param(p.w0),     t.param(p.w1),
          t.param(p.mlp1_w), t.param(p.mlp1_b), t.param(p.mlp2_w), t.param(p.mlp2_b),
          p.capacity()};
}

inline BoundGcn bind_frozen(Tape& t, const GcnParams& p) {
  return {t.constant(p.theta1.value), t.constant(p.theta2.value), t.constant(p.w0.value),
          t.constant(p.w1.value),     t.constant(p.mlp1_w.value), t.constant(p.mlp1_b.value),
          t.constant(p.mlp2_w.value), t.constant(p.mlp2_b.value), p.capacity()};
}

// leaky_relu(P x theta)
inline Value hgc_layer(const Value& x, const Value& propagation, const Value& theta,
                       double slope = kDefaultLeakySlope) {
  if (propagation.rows() != x.rows() || propagation.cols() != x.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "propagation " + propagation.data().shape_str() + " vs " + std::to_string(x.rows()) + " nodes");
  }
  return leaky_relu(matmul(matmul(propagation, x), theta), slope);
}

struct HopStack {
  Value x0, x1, x2;
  Value h;  // (x0 | x1 | x2)
};

inline HopStack run_hops(const Value& x0, const Value& propagation, const BoundGcn& g,
                         double slope = kDefaultLeakySlope) {
  HopStack s;
  s.x0 = x0;
  s.x1 = hgc_layer(x0, propagation, g.theta1, slope);
  s.x2 = hgc_layer(s.x1, propagation, g.theta2, slope);
  s.h = concat_cols({s.x0, s.x1, s.x2});
  return s;
}

// Attention map A = sigmoid(relu(h^T W0) W1), 3*D_S x n, using the leading
// n x n blocks of W0 and W1.
inline Value attention_map(const Value& h, const BoundGcn& g) {
  const std::size_t n = h.rows();
  if (n > g.capacity) {
    throw Error(ErrorCode::BufferOverCapacity,
                std::to_string(n) + " nodes exceed attention capacity " + std::to_string(g.capacity));
  }
  Value w0 = n == g.capacity ? g.w0 : slice(g.w0, 0, n, 0, n);
  Value w1 = n == g.capacity ? g.w1 : slice(g.w1, 0, n, 0, n);
  return sigmoid(matmul(relu(matmul(transpose(h), w0)), w1));
}

inline Value center(const Value& a, CenteringMode mode) {
  switch (mode) {
    case CenteringMode::Global:
      return sub(a, broadcast(mean_all(a), a.rows(), a.cols()));
    case CenteringMode::PerNode:
      return add_bias(a, negate(mean_rows(a)));
    case CenteringMode::PerChannel: {
      Value at = transpose(a);
      return transpose(add_bias(at, negate(mean_rows(at))));
    }
  }
  throw Error(ErrorCode::InvalidValue, "unknown centering mode");
}

// H' = H ⊙ (A - mean(A))^T
inline Value centering_attention(const Value& h, const BoundGcn& g, CenteringMode mode = CenteringMode::Global) {
  Value centered = center(attention_map(h, g), mode);
  return hadamard(h, transpose(centered));
}

struct GraphPrediction {
  Value probs;   // B x C
  Value logits;  // B x C
};

// MLP head on rows [row_begin, row_end) of H'.
inline GraphPrediction cls_graph(const Value& hprime, const BoundGcn& g, std::size_t row_begin,
                                 std::size_t row_end) {
  if (row_begin >= row_end || row_end > hprime.rows()) {
    throw Error(ErrorCode::IndexOutOfRange, "batch rows [" + std::to_string(row_begin) + ", " +
                                                std::to_string(row_end) + ") of " + std::to_string(hprime.rows()));
  }
  Value rows = (row_begin == 0 && row_end == hprime.rows()) ? hprime : slice_rows(hprime, row_begin, row_end);
  Value hidden = relu(add_bias(matmul(rows, g.mlp1_w), g.mlp1_b));
  Value logits = add_bias(matmul(hidden, g.mlp2_w), g.mlp2_b);
  return {softmax_rows(logits), logits};
}

}  // namespace slidegcd
