#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slidegcd/autodiff.hpp"

namespace slidegcd {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_parameter;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Relative error with the denominator floored at `floor` so that
// coordinates whose true gradient is ~0 are judged on absolute error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares backward() against central differences for every coordinate of
// every parameter. `loss` must build a fresh forward pass on the given tape
// from the parameters' current values and return a 1x1 Value.
inline GradCheckReport grad_check(const std::function<Value(Tape&)>& loss,
                                  std::span<Parameter* const> params, double eps = 1e-5,
                                  double tol = 1e-4) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Value l = loss(tape);
    tape.backward(l);
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Tape tape;
    return loss(tape).data()(0, 0);
  };

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    GradCheckEntry entry{p.name, 0.0, p.value.size()};
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double fp = eval();
      p.value[i] = orig - eps;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[k][i], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_parameter.push_back(std::move(entry));
  }
  for (auto* p : params) p->zero_grad();
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace slidegcd
