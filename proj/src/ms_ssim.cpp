#include "itae/ms_ssim.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <mutex>
#include <numeric>
#include <set>

#include "itae/conv.hpp"
#include "itae/errors.hpp"
#include "itae/ops.hpp"

namespace itae {

namespace {

Tensor5 gaussian_kernel(int window, double sigma, bool along_width) {
  std::vector<double> g(static_cast<std::size_t>(window));
  const double center = (window - 1) / 2.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - center;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
  }
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) v /= total;
  return along_width ? Tensor5({1, 1, 1, 1, window}, g) : Tensor5({1, 1, 1, window, 1}, g);
}

Tensor5 blur(const Tensor5& x, const Tensor5& gw, const Tensor5& gh) {
  return conv3d(conv3d(x, gw, {1, 1, 1}, {0, 0, 0}), gh, {1, 1, 1}, {0, 0, 0});
}

Tensor5 avg_pool2(const Tensor5& x) {
  static const Tensor5 k({1, 1, 1, 2, 2}, 0.25);
  return conv3d(x, k, {1, 2, 2}, {0, 0, 0});
}

void warn_reduced(std::int64_t h, std::int64_t w, int requested, int used) {
  static std::mutex mu;
  static std::set<std::pair<std::int64_t, std::int64_t>> seen;
  std::lock_guard lock(mu);
  if (seen.insert({h, w}).second) {
    spdlog::warn("MS-SSIM: {}x{} frames too small for {} scales, using {}", h, w, requested,
                 used);
  }
}

}  // namespace

int effective_scales(std::int64_t height, std::int64_t width, const MsSsimOptions& opts) {
  const std::int64_t side = std::min(height, width);
  int s = 0;
  while (s < opts.scales && opts.window * (std::int64_t{1} << s) <= side) ++s;
  if (s == 0) {
    throw DimensionError("MS-SSIM: frame " + std::to_string(height) + "x" +
                         std::to_string(width) + " smaller than window " +
                         std::to_string(opts.window));
  }
  return s;
}

Tensor5 ms_ssim(const Tensor5& a, const Tensor5& b, const MsSsimOptions& opts) {
  if (a.shape() != b.shape()) {
    throw DimensionError("ms_ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  if (static_cast<int>(opts.weights.size()) < opts.scales) {
    throw ConfigError("ms_ssim: fewer weights than scales");
  }
  const int scales = effective_scales(a.shape().h(), a.shape().w(), opts);
  if (scales < opts.scales) warn_reduced(a.shape().h(), a.shape().w(), opts.scales, scales);
  double weight_total = 0.0;
  for (int i = 0; i < scales; ++i) weight_total += opts.weights[static_cast<std::size_t>(i)];

  const double c1 = std::pow(opts.k1 * opts.data_range, 2);
  const double c2 = std::pow(opts.k2 * opts.data_range, 2);
  const Tensor5 gw = gaussian_kernel(opts.window, opts.sigma, true);
  const Tensor5 gh = gaussian_kernel(opts.window, opts.sigma, false);

  Tensor5 x = mean(a, {kChannel});
  Tensor5 y = mean(b, {kChannel});
  Tensor5 result;
  for (int s = 0; s < scales; ++s) {
    Tensor5 mu_x = blur(x, gw, gh);
    Tensor5 mu_y = blur(y, gw, gh);
    Tensor5 mu_xx = square(mu_x);
    Tensor5 mu_yy = square(mu_y);
    Tensor5 mu_xy = mul(mu_x, mu_y);
    Tensor5 var_x = sub(blur(square(x), gw, gh), mu_xx);
    Tensor5 var_y = sub(blur(square(y), gw, gh), mu_yy);
    Tensor5 cov = sub(blur(mul(x, y), gw, gh), mu_xy);
    Tensor5 cs_map = div(add_scalar(scale(cov, 2.0), c2), add_scalar(add(var_x, var_y), c2));
    Tensor5 term;
    if (s + 1 < scales) {
      term = mean(cs_map, {kHeight, kWidth});
    } else {
      Tensor5 l_map = div(add_scalar(scale(mu_xy, 2.0), c1), add_scalar(add(mu_xx, mu_yy), c1));
      term = mean(mul(l_map, cs_map), {kHeight, kWidth});
    }
    const double w = opts.weights[static_cast<std::size_t>(s)] / weight_total;
    // Negative structure terms are clamped, as in common MS-SSIM implementations.
    Tensor5 factor = pow_scalar(clamp_min(term, 1e-8), w);
    result = result.defined() ? mul(result, factor) : factor;
    if (s + 1 < scales) {
      x = avg_pool2(x);
      y = avg_pool2(y);
    }
  }
  return result;
}

}  // namespace itae
