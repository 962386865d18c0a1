#pragma once

#include <cmath>
#include <vector>

#include "slidegcd/autodiff.hpp"

namespace slidegcd {

// Adam. A parameter whose gradient is identically zero is skipped for that
// step (no moment decay, no update), the same as a parameter with no grad.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
      steps_.push_back(0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      if (p.grad.max_abs() == 0.0) continue;
      const int t = ++steps_[k];
      const double c1 = 1.0 - std::pow(beta1_, t);
      const double c2 = 1.0 - std::pow(beta2_, t);
      Matrix& m = m_[k];
      Matrix& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  std::vector<int> steps_;
  double lr_;
  double beta1_, beta2_, eps_;
};

}  // namespace slidegcd
