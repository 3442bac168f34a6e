#pragma once

#include <vector>

#include "itae/tensor.hpp"

namespace itae {

struct MsSsimOptions {
  int scales = 5;
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
};

// Largest scale count s <= opts.scales with window * 2^(s-1) <= min(h, w).
// Throws DimensionError when even one scale does not fit.
int effective_scales(std::int64_t height, std::int64_t width, const MsSsimOptions& opts = {});

// Per-frame MS-SSIM of the channel-mean luminance of a and b, shape (N,1,T,1,1).
// Uses valid-mode Gaussian filtering and 2x2 average pooling between scales.
// When the frame is too small for opts.scales, the scale count shrinks, the
// leading weights are renormalized to sum to one, and a warning is logged.
Tensor5 ms_ssim(const Tensor5& a, const Tensor5& b, const MsSsimOptions& opts = {});

}  // namespace itae
