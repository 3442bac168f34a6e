#include "itae/optim.hpp"

#include <cmath>
#include <numbers>

namespace itae {

double CosineSchedule::at(long step) const {
  if (total_steps <= 1) return base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(ParameterSet& params, Options opts) : params_(params), opts_(opts) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& p : params_) {
    auto& m = m_[k];
    auto& v = v_[k];
    ++k;
    if (!p.value.has_grad()) continue;
    auto g = p.value.grad();
    auto x = p.value.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

}  // namespace itae
