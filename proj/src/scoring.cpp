#include "itae/scoring.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "itae/errors.hpp"

namespace itae {

std::vector<double> recon_score(const Tensor5& input, const Tensor5& output, int patch, int stride) {
  const Shape5& s = input.shape();
  if (s != output.shape()) {
    throw DimensionError("recon_score: shape mismatch " + s.str() + " vs " + output.shape().str());
  }
  if (patch < 1 || stride < 1 || patch > s.h() || patch > s.w()) {
    throw ConfigError("patch size " + std::to_string(patch) + " / stride " + std::to_string(stride) +
                      " invalid for " + std::to_string(s.h()) + "x" + std::to_string(s.w()) + " frames");
  }
  const std::int64_t h = s.h(), w = s.w();
  auto a = input.data();
  auto b = output.data();
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(s.n() * s.t()));
  // integral image of the channel-mean absolute error
  std::vector<double> integral(static_cast<std::size_t>((h + 1) * (w + 1)));
  const double area = static_cast<double>(patch) * patch;
  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t t = 0; t < s.t(); ++t) {
      std::fill(integral.begin(), integral.end(), 0.0);
      for (std::int64_t y = 0; y < h; ++y) {
        double row = 0.0;
        for (std::int64_t x = 0; x < w; ++x) {
          double e = 0.0;
          for (std::int64_t c = 0; c < s.c(); ++c) {
            const auto i = static_cast<std::size_t>(input.offset(n, c, t, y, x));
            e += std::abs(a[i] - b[i]);
          }
          row += e / static_cast<double>(s.c());
          integral[static_cast<std::size_t>((y + 1) * (w + 1) + x + 1)] =
              integral[static_cast<std::size_t>(y * (w + 1) + x + 1)] + row;
        }
      }
      auto at = [&](std::int64_t y, std::int64_t x) { return integral[static_cast<std::size_t>(y * (w + 1) + x)]; };
      double best = -std::numeric_limits<double>::infinity();
      for (std::int64_t y = 0; y + patch <= h; y += stride) {
        for (std::int64_t x = 0; x + patch <= w; x += stride) {
          const double sum = at(y + patch, x + patch) - at(y, x + patch) - at(y + patch, x) + at(y, x);
          best = std::max(best, sum / area);
        }
      }
      scores.push_back(best);
    }
  }
  return scores;
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.size() < 2) {
    if (!v.empty()) spdlog::warn("min-max normalization of a single value; mapped to 0");
    return out;
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  return out;
}

std::vector<double> nll_score(const std::vector<double>& nll_static, const std::vector<double>& nll_dynamic) {
  if (!nll_dynamic.empty() && nll_dynamic.size() != nll_static.size()) {
    throw DimensionError("nll_score: static series has " + std::to_string(nll_static.size()) +
                         " frames, dynamic has " + std::to_string(nll_dynamic.size()));
  }
  std::vector<double> sum = nll_static;
  for (std::size_t i = 0; i < nll_dynamic.size(); ++i) sum[i] += nll_dynamic[i];
  return minmax_normalize(sum);
}

std::vector<double> fuse(const std::vector<double>& recon, const std::vector<double>& nll_term, double lambda) {
  if (recon.size() != nll_term.size()) {
    throw DimensionError("fuse: " + std::to_string(recon.size()) + " recon values vs " +
                         std::to_string(nll_term.size()) + " nll values");
  }
  std::vector<double> out(recon.size());
  for (std::size_t i = 0; i < recon.size(); ++i) out[i] = recon[i] + lambda * nll_term[i];
  return out;
}

FrameAccumulator::FrameAccumulator(std::int64_t n_frames)
    : sum_(static_cast<std::size_t>(n_frames), 0.0), count_(static_cast<std::size_t>(n_frames), 0) {}

void FrameAccumulator::add(std::int64_t frame, double value) {
  if (frame < 0 || frame >= size()) throw DimensionError("frame index " + std::to_string(frame) + " out of range");
  sum_[static_cast<std::size_t>(frame)] += value;
  ++count_[static_cast<std::size_t>(frame)];
}

std::vector<double> FrameAccumulator::means() const {
  std::vector<double> out(sum_.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    if (count_[i] > 0) out[i] = sum_[i] / static_cast<double>(count_[i]);
  }
  return out;
}

RocResult roc_auc_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  double pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("ROC needs both normal and abnormal frames");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("roc: non-finite score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  std::vector<double> thresholds{std::numeric_limits<double>::infinity()};
  r.roc.push_back({0.0, 0.0});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    // all frames tied at this threshold flip together
    for (; i < order.size() && scores[order[i]] == thr; ++i) (labels[order[i]] ? tp : fp) += 1;
    r.roc.push_back({fp / neg, tp / pos});
    thresholds.push_back(thr);
  }
  for (std::size_t i = 1; i < r.roc.size(); ++i) {
    const auto [x0, y0] = r.roc[i - 1];
    const auto [x1, y1] = r.roc[i];
    r.auc += (x1 - x0) * (y0 + y1) / 2;
  }
  // g = fpr - fnr rises from -1 to 1 along the curve
  for (std::size_t i = 1; i < r.roc.size(); ++i) {
    const double g0 = r.roc[i - 1].first - (1 - r.roc[i - 1].second);
    const double g1 = r.roc[i].first - (1 - r.roc[i].second);
    if (g0 <= 0 && g1 >= 0) {
      const double a = g1 == g0 ? 0.0 : -g0 / (g1 - g0);
      r.eer = r.roc[i - 1].first + a * (r.roc[i].first - r.roc[i - 1].first);
      r.eer_threshold = std::isinf(thresholds[i - 1]) ? thresholds[i] : thresholds[i - 1] + a * (thresholds[i] - thresholds[i - 1]);
      break;
    }
  }
  return r;
}

}  // namespace itae
