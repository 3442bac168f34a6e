#pragma once

#include <vector>

#include "itae/checkpoint.hpp"

namespace itae {

// Cosine annealing from base_lr down to min_lr over total_steps.
struct CosineSchedule {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  long total_steps = 1;

  double at(long step) const;
};

class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(ParameterSet& params) : Adam(params, Options{}) {}
  Adam(ParameterSet& params, Options opts);

  // One update with step size lr using the gradients currently held by the
  // parameters. Parameters without a gradient are left untouched.
  void step(double lr);
  long steps() const { return t_; }

 private:
  ParameterSet& params_;
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace itae
