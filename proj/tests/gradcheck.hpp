#pragma once

// Central finite-difference oracle for reverse-mode gradients. Test-only:
// it perturbs leaf data directly and never touches the tape machinery.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "itae/tensor.hpp"

namespace itae::testing {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Relative error per leaf is ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, floor).
inline GradCheckReport gradcheck(const std::function<Tensor5()>& loss_fn,
                                 std::vector<Tensor5> leaves, double eps = 1e-4,
                                 double floor = 1e-10) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  GradTape::current().clear();
  Tensor5 loss = loss_fn();
  backward(loss);

  GradCheckReport report;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) {
      auto g = leaf.grad();
      analytic.assign(g.begin(), g.end());
    }
    std::vector<double> numeric(analytic.size());
    {
      NoGradGuard guard;
      auto data = leaf.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + eps;
        const double up = loss_fn().item();
        data[i] = orig - eps;
        const double down = loss_fn().item();
        data[i] = orig;
        numeric[i] = (up - down) / (2 * eps);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[i] - numeric[i]));
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  for (auto& l : leaves) l.zero_grad();
  return report;
}

}  // namespace itae::testing
