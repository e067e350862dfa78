#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "dejavu/nn/module.hpp"

namespace dejavu::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long total_steps = 0;  // cosine decay horizon; 0 keeps lr constant
};

inline double cosine_lr(double base, long step, long total) {
  if (total <= 0) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamSet<T> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_.params()) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  // Applies one update from the accumulated gradients; parameters without a
  // gradient this step are left untouched.
  void step() {
    ++t_;
    const double lr = cosine_lr(opt_.lr, t_ - 1, opt_.total_steps);
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(opt_.eps);
    auto& ps = params_.params();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& var = ps[k].var;
      if (!var.node()->has_grad()) continue;
      auto& w = var.mutable_value();
      const auto& g = var.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      }
    }
  }

  void zero_grad() { params_.zero_grad(); }
  long steps_taken() const { return t_; }
  void set_steps_taken(long t) { t_ = t; }
  const ParamSet<T>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  double current_lr() const { return cosine_lr(opt_.lr, t_, opt_.total_steps); }

 private:
  ParamSet<T> params_;
  AdamOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace dejavu::nn
