#pragma once

// Slide-level hypergraph: AGG projection, kNN hyperedges and the normalized
// propagation operator Dv^-1/2 M W De^-1 M^T Dv^-1/2 (W = I).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slidegcd/autodiff.hpp"

namespace slidegcd {

struct AggParams {
  Parameter w1;  // D_S x D_h
  Parameter b1;  // 1 x D_h
  Parameter w2;  // D_h x D_h
  Parameter b2;  // 1 x D_h

  template <class Rng>
  static AggParams init(std::size_t d_s, std::size_t d_h, Rng& rng) {
    return {Parameter("agg.w1", Matrix::glorot(d_s, d_h, rng)), Parameter("agg.b1", Matrix(1, d_h)),
            Parameter("agg.w2", Matrix::glorot(d_h, d_h, rng)), Parameter("agg.b2", Matrix(1, d_h))};
  }

  std::vector<Parameter*> all() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Parameter*> all() const { return {&w1, &b1, &w2, &b2}; }
};

// relu(x W1 + b1) W2 + b2. Plain matrices: nothing differentiates through kNN.
inline Matrix agg_project(const Matrix& x, const AggParams& p) {
  if (x.cols() != p.w1.value.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "agg_project input width " + std::to_string(x.cols()));
  }
  Matrix h = matmul(x, p.w1.value);
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) = std::max(0.0, h(i, j) + p.b1.value(0, j));
  Matrix out = matmul(h, p.w2.value);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += p.b2.value(0, j);
  return out;
}

struct Hypergraph {
  std::size_t n = 0;
  // Each hyperedge lists its center first, then neighbors nearest-first.
  std::vector<std::vector<std::size_t>> edges;
  bool k_clamped = false;

  Matrix incidence() const {
    Matrix m(n, edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e)
      for (auto v : edges[e]) m(v, e) = 1.0;
    return m;
  }

  nlohmann::json to_json() const { return {{"n", n}, {"edges", edges}}; }
};

// One hyperedge per center in [center_begin, center_end): the center plus
// its min(k, n-1) nearest other nodes (Euclidean; ties -> lower index).
inline Hypergraph knn_hyperedges(const Matrix& projected, std::size_t k, std::size_t center_begin,
                                 std::size_t center_end) {
  const std::size_t n = projected.rows();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "knn_hyperedges on zero nodes");
  if (k < 1) throw InvalidValueError("k", "must be >= 1");
  if (center_begin > center_end || center_end > n) {
    throw Error(ErrorCode::IndexOutOfRange, "center range");
  }
  Hypergraph g;
  g.n = n;
  const std::size_t kk = std::min(k, n - 1);
  g.k_clamped = kk < k;
  using Cand = std::pair<double, std::size_t>;  // (distance, index), lexicographic
  for (std::size_t c = center_begin; c < center_end; ++c) {
    std::priority_queue<Cand> worst_on_top;
    const auto pc = projected.row(c);
    for (std::size_t j = 0; j < n && kk > 0; ++j) {
      if (j == c) continue;
      Cand cand{squared_distance(pc, projected.row(j)), j};
      if (worst_on_top.size() < kk) {
        worst_on_top.push(cand);
      } else if (cand < worst_on_top.top()) {
        worst_on_top.pop();
        worst_on_top.push(cand);
      }
    }
    std::vector<std::size_t> edge(kk + 1);
    edge[0] = c;
    for (std::size_t i = kk; i > 0; --i) {
      edge[i] = worst_on_top.top().second;
      worst_on_top.pop();
    }
    g.edges.push_back(std::move(edge));
  }
  return g;
}

// Dense n x n propagation operator with unit hyperedge weights. Nodes in no
// hyperedge get zero rows and columns.
inline Matrix build_propagation_operator(const Hypergraph& g) {
  std::vector<double> node_degree(g.n, 0.0);
  for (const auto& e : g.edges) {
    if (e.empty()) throw Error(ErrorCode::EmptyInput, "hyperedge with no members");
    for (auto v : e) {
      if (v >= g.n) throw Error(ErrorCode::IndexOutOfRange, "hyperedge member " + std::to_string(v));
      node_degree[v] += 1.0;
    }
  }
  std::vector<double> inv_sqrt(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    if (node_degree[i] > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(node_degree[i]);
  }
  Matrix p(g.n, g.n);
  for (const auto& e : g.edges) {
    const double inv_edge = 1.0 / static_cast<double>(e.size());
    for (auto i : e)
      for (auto j : e) p(i, j) += inv_sqrt[i] * inv_edge * inv_sqrt[j];
  }
  return p;
}

}  // namespace slidegcd
