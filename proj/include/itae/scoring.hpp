#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "itae/tensor.hpp"

namespace itae {

// Per-frame R: max over N x N patches (placed every `stride` pixels) of the mean
// absolute pixel error, with the error averaged over channels. Returns one value
// per (n, t), index n*T + t.
std::vector<double> recon_score(const Tensor5& input, const Tensor5& output, int patch = 16,
                                int stride = 4);

// (v - min) / (max - min); constant or single-element series map to zeros.
std::vector<double> minmax_normalize(const std::vector<double>& v);

// L_t = minmax(nll_static_t + nll_dynamic_t).
std::vector<double> nll_score(const std::vector<double>& nll_static,
                              const std::vector<double>& nll_dynamic);

// S_t = R_t + lambda * L_t.
std::vector<double> fuse(const std::vector<double>& recon, const std::vector<double>& nll_term,
                         double lambda);

// Mean of every value reported for each frame index; frames never reported stay NaN.
class FrameAccumulator {
 public:
  explicit FrameAccumulator(std::int64_t n_frames);
  void add(std::int64_t frame, double value);
  std::vector<double> means() const;
  std::int64_t size() const { return static_cast<std::int64_t>(sum_.size()); }

 private:
  std::vector<double> sum_;
  std::vector<std::int64_t> count_;
};

struct RocResult {
  double auc = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::vector<std::pair<double, double>> roc;  // (fpr, tpr), from (0,0) to (1,1)
};

// Threshold sweep over all distinct scores, higher score = more anomalous.
// Throws UndefinedMetricError unless both labels are present.
RocResult roc_auc_eer(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace itae
