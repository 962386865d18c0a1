#pragma once

#include <cmath>
#include <span>

#include "json.hpp"
#include "slidegcd/autodiff.hpp"

namespace slidegcd {

inline constexpr double kLogEpsilon = 1e-12;

// -(1/B) sum_i log(probs[i, y_i] + eps)
inline Value cross_entropy(const Value& probs, std::span<const int> labels) {
  const Matrix& p = probs.data();
  if (labels.size() != p.rows()) throw Error(ErrorCode::DimensionMismatch, "label count != rows");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= p.cols()) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
    }
  }
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) {
      if (v < 0.0) throw Error(ErrorCode::NonDistributionInput, "negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw Error(ErrorCode::NonDistributionInput, "row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  return negate(mean_all(log(add_scalar(gather(probs, labels), kLogEpsilon))));
}

// Temperature-scaled Jensen-Shannon distillation. The teacher (MIL) logits
// are detached; the result is t^2 * mean over rows of JS(p || q).
inline Value js_kd_loss(const Value& logits_student, const Value& logits_teacher, double t_hat) {
  if (!(t_hat > 0.0)) throw Error(ErrorCode::NonPositiveTemperature, std::to_string(t_hat));
  if (!logits_student.data().same_shape(logits_teacher.data())) {
    throw Error(ErrorCode::DimensionMismatch, "js_kd_loss " + logits_student.data().shape_str() + " vs " +
                                                  logits_teacher.data().shape_str());
  }
  const double inv_t = 1.0 / t_hat;
  Value p = softmax_rows(scale(logits_student, inv_t));
  Value q = softmax_rows(scale(detach(logits_teacher), inv_t));
  Value m = scale(add(p, q), 0.5);
  Value log_p = log(add_scalar(p, kLogEpsilon));
  Value log_q = log(add_scalar(q, kLogEpsilon));
  Value log_m = log(add_scalar(m, kLogEpsilon));
  Value terms = add(scale(hadamard(p, sub(log_p, log_m)), 0.5), scale(hadamard(q, sub(log_q, log_m)), 0.5));
  const double rows = static_cast<double>(logits_student.rows());
  return scale(sum_all(terms), t_hat * t_hat / rows);
}

struct LossBreakdown {
  double ce_mil = 0.0;
  double ce_graph = 0.0;
  double kd = 0.0;
  double total = 0.0;
  double w = 1.0;
  double t_hat = 1.5;

  bool operator==(const LossBreakdown&) const = default;
};

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"ce_mil", b.ce_mil}, {"ce_graph", b.ce_graph}, {"kd", b.kd}, {"total", b.total}};
}

struct LossTerms {
  Value ce_mil, ce_graph, kd, total;
  double w = 1.0;
  double t_hat = 1.5;

  LossBreakdown breakdown() const {
    return {ce_mil.data()(0, 0), ce_graph.data()(0, 0), kd.data()(0, 0), total.data()(0, 0), w, t_hat};
  }
};

// L = CE(mil) + CE(graph) + w * KD
inline LossTerms total_loss(const Value& probs_mil, const Value& logits_mil, const Value& probs_graph,
                            const Value& logits_graph, std::span<const int> labels, double w, double t_hat) {
  LossTerms t;
  t.w = w;
  t.t_hat = t_hat;
  t.ce_mil = cross_entropy(probs_mil, labels);
  t.ce_graph = cross_entropy(probs_graph, labels);
  t.kd = js_kd_loss(logits_graph, logits_mil, t_hat);
  t.total = add(add(t.ce_mil, t.ce_graph), scale(t.kd, w));
  return t;
}

}  // namespace slidegcd
