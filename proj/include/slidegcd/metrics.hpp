#pragma once

// Accuracy, macro F1 and macro one-vs-rest ROC AUC.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "slidegcd/matrix.hpp"

namespace slidegcd {

struct MetricsReport {
  double acc = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;  // absent when fewer than two classes are present
  std::vector<double> per_class_f1;
  std::vector<std::optional<double>> per_class_auc;
  // Classes with no predictions and no instances; their F1 is taken as 0.
  std::vector<int> f1_empty_classes;
};

inline std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Mann-Whitney form of the trapezoidal ROC area; tied scores get midranks.
// Positives are the entries with labels[i] == positive_class.
inline std::optional<double> binary_auc(std::span<const double> scores, std::span<const int> labels,
                                        int positive_class) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == positive_class) {
        rank_sum += midrank;
        pos += 1;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline MetricsReport evaluate_metrics(const Matrix& scores, std::span<const int> labels) {
  const std::size_t t = scores.rows(), c = scores.cols();
  if (t == 0) throw Error(ErrorCode::EmptyInput, "no predictions");
  if (labels.size() != t) throw Error(ErrorCode::DimensionMismatch, "labels vs score rows");
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0.0;
    for (double v : scores.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-6) throw Error(ErrorCode::NonDistributionInput, "score row " + std::to_string(i));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw Error(ErrorCode::LabelOutOfRange, std::to_string(y));
  }

  MetricsReport r;
  std::vector<double> tp(c, 0), fp(c, 0), fn(c, 0);
  double correct = 0;
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t pred = argmax(scores.row(i));
    const auto y = static_cast<std::size_t>(labels[i]);
    if (pred == y) {
      correct += 1;
      tp[y] += 1;
    } else {
      fp[pred] += 1;
      fn[y] += 1;
    }
  }
  r.acc = correct / static_cast<double>(t);

  double f1_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double denom = 2 * tp[k] + fp[k] + fn[k];
    double f1 = 0.0;
    if (denom == 0) {
      r.f1_empty_classes.push_back(static_cast<int>(k));
    } else {
      f1 = 2 * tp[k] / denom;
    }
    r.per_class_f1.push_back(f1);
    f1_sum += f1;
  }
  r.macro_f1 = f1_sum / static_cast<double>(c);

  double auc_sum = 0.0;
  int auc_count = 0;
  std::vector<double> col(t);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < t; ++i) col[i] = scores(i, k);
    auto auc = binary_auc(col, labels, static_cast<int>(k));
    r.per_class_auc.push_back(auc);
    if (auc) {
      auc_sum += *auc;
      ++auc_count;
    }
  }
  if (auc_count > 0) r.macro_auc = auc_sum / auc_count;
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = {{"acc", r.acc}, {"macro_f1", r.macro_f1}};
  j["macro_auc"] = r.macro_auc ? nlohmann::json(*r.macro_auc) : nlohmann::json(nullptr);
  if (!r.f1_empty_classes.empty()) j["f1_empty_classes"] = r.f1_empty_classes;
  return j;
}

}  // namespace slidegcd
