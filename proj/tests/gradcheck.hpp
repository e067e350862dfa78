#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dejavu/autograd/var.hpp"

namespace dejavu::testing {

struct GradCheckResult {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t checked = 0;
  // worst entry by relative error
  std::size_t worst_input = 0, worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

// Compares the analytic gradient of `loss_fn` with central differences for
// every entry of `inputs`. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradcheck(const std::function<ag::Var<double>()>& loss_fn,
                                 std::vector<ag::Var<double>> inputs, double h = 1e-6, double floor = 1e-6,
                                 std::size_t max_entries_per_input = 0) {
  for (auto& v : inputs) v.zero_grad();
  auto loss = loss_fn();
  ag::backward(loss);
  std::vector<Tensor<double>> analytic;
  for (auto& v : inputs) analytic.push_back(v.node()->has_grad() ? v.grad() : Tensor<double>(v.shape()));
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& val = inputs[k].mutable_value();
    const std::size_t n = max_entries_per_input ? std::min(val.size(), max_entries_per_input) : val.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double orig = val[i];
      val[i] = orig + h;
      const double fp = loss_fn().item();
      val[i] = orig - h;
      const double fm = loss_fn().item();
      val[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - num);
      r.max_abs = std::max(r.max_abs, abs_err);
      const double rel = abs_err / std::max({std::abs(a), std::abs(num), floor});
      if (rel > r.max_rel) r = {rel, r.max_abs, r.checked, k, i, a, num};
      ++r.checked;
    }
  }
  for (auto& v : inputs) v.zero_grad();
  return r;
}

}  // namespace dejavu::testing
