#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "itae/checkpoint.hpp"
#include "itae/tensor.hpp"

namespace itae {

// Result of pushing a batch through one invertible layer. logdet has shape
// (N,1,1,1,1): log|det J| per sample.
struct FlowLayerOutput {
  Tensor5 y;
  Tensor5 logdet;
};

class FlowLayer {
 public:
  virtual ~FlowLayer() = default;
  virtual std::string kind() const = 0;
  virtual FlowLayerOutput forward(const Tensor5& x) const = 0;
  // Inverse map; logdet is log|det| of the inverse Jacobian (= -forward logdet).
  virtual FlowLayerOutput inverse(const Tensor5& y) const = 0;
  virtual void collect(ParameterSet& params, ParameterSet& buffers, const std::string& prefix) = 0;
};

// y = x * exp(logs) + bias, per channel.
class ActNorm final : public FlowLayer {
 public:
  explicit ActNorm(std::int64_t channels);
  std::string kind() const override { return "actnorm"; }
  FlowLayerOutput forward(const Tensor5& x) const override;
  FlowLayerOutput inverse(const Tensor5& y) const override;
  void collect(ParameterSet& params, ParameterSet& buffers, const std::string& prefix) override;

  // Sets scale and bias so the batch has zero mean and unit variance per channel.
  void initialize(const Tensor5& x, double eps = 1e-6);
  bool initialized() const { return initialized_.data()[0] != 0.0; }
  Tensor5& logs() { return logs_; }
  Tensor5& bias() { return bias_; }

 private:
  Tensor5 logs_, bias_;
  Tensor5 initialized_;  // 1-element buffer, persisted with checkpoints
};

// Channel-mixing 1x1 convolution, W = P * (I + L) * (U + diag(sign * exp(log_s))).
class InvConv1x1 final : public FlowLayer {
 public:
  // Random orthogonal initialization, LU-decomposed with partial pivoting.
  InvConv1x1(std::int64_t channels, std::uint64_t seed);
  std::string kind() const override { return "invconv"; }
  FlowLayerOutput forward(const Tensor5& x) const override;
  FlowLayerOutput inverse(const Tensor5& y) const override;
  void collect(ParameterSet& params, ParameterSet& buffers, const std::string& prefix) override;

  // Differentiable (C,C,1,1,1) weight assembled from the LU factors.
  Tensor5 weight() const;
  Tensor5& lower() { return lower_; }
  Tensor5& upper() { return upper_; }
  Tensor5& log_s() { return log_s_; }

 private:
  std::int64_t channels_;
  Tensor5 lower_, upper_, log_s_;  // (1,1,1,C,C), (1,1,1,C,C), (1,1,1,1,C)
  Tensor5 perm_, sign_;            // buffers: (1,1,1,C,C) permutation matrix, (1,1,1,1,C)
};

// First half of the channels conditions an affine map of the second half.
// Conditioner: 3x3 conv -> ReLU -> 1x1 conv -> ReLU -> zero-initialized 3x3 conv.
// log-scale = 2 * tanh(raw), so the layer is the identity at initialization.
class AffineCoupling final : public FlowLayer {
 public:
  AffineCoupling(std::int64_t channels, std::int64_t hidden, std::uint64_t seed);
  std::string kind() const override { return "coupling"; }
  FlowLayerOutput forward(const Tensor5& x) const override;
  FlowLayerOutput inverse(const Tensor5& y) const override;
  void collect(ParameterSet& params, ParameterSet& buffers, const std::string& prefix) override;

  std::int64_t split() const { return split_; }
  ParameterSet& conditioner() { return net_; }

 private:
  struct ShiftScale {
    Tensor5 shift, log_scale;
  };
  ShiftScale condition(const Tensor5& xa) const;

  std::int64_t channels_, split_;
  ParameterSet net_;
};

// 2x2 space-to-channel rearrangement; volume preserving.
class Squeeze final : public FlowLayer {
 public:
  std::string kind() const override { return "squeeze"; }
  FlowLayerOutput forward(const Tensor5& x) const override;
  FlowLayerOutput inverse(const Tensor5& y) const override;
  void collect(ParameterSet&, ParameterSet&, const std::string&) override {}
};

struct FlowConfig {
  std::int64_t channels = 2;  // per-sample input shape (C, 1, H, W)
  std::int64_t height = 16;
  std::int64_t width = 16;
  int steps_per_level = 4;  // K
  int levels = 2;           // L
  std::int64_t hidden = 64;
  bool squeeze = true;  // 2x2 squeeze at the start of every level
  std::uint64_t seed = 0;

  void validate() const;
  std::string fingerprint() const;
};

// log N(z; 0, I) summed per sample, shape (N,1,1,1,1).
Tensor5 gaussian_log_prob(const Tensor5& z);

struct FlowOutput {
  Tensor5 nll;       // (N,1,1,1,1), -log p_x(x)
  Tensor5 log_prior;  // (N,1,1,1,1), log p_z(z) over all factored-out parts
  Tensor5 logdet;     // (N,1,1,1,1), sum of per-layer log-determinants
  std::vector<Tensor5> z_parts;
  std::vector<Tensor5> layer_logdets;  // one per layer, in application order
  std::int64_t dims = 0;               // dimensions per sample

  double mean_nll() const;
  double bits_per_dim() const;  // mean_nll / (dims * ln 2)
};

struct FlowInverseOutput {
  Tensor5 x;
  Tensor5 logdet;  // log|det| of the inverse map, (N,1,1,1,1)
};

// Multi-scale Glow: per level [squeeze], K x (ActNorm, InvConv1x1, AffineCoupling),
// then (except at the last level) half the channels are factored out to the prior.
class FlowStack {
 public:
  explicit FlowStack(const FlowConfig& config);

  const FlowConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& buffers() { return buffers_; }
  const ParameterSet& buffers() const { return buffers_; }
  std::int64_t dims() const { return config_.channels * config_.height * config_.width; }
  // Per-sample shapes of the latent parts, in the order forward_nll returns them.
  const std::vector<Shape5>& topology() const { return topology_; }
  std::size_t layer_count() const;
  FlowLayer& layer(std::size_t level, std::size_t index);

  // Data-dependent ActNorm initialization, applied level by level on `batch`.
  void initialize(const Tensor5& batch);
  bool initialized() const;

  FlowOutput forward_nll(const Tensor5& x) const;
  FlowInverseOutput inverse(const std::vector<Tensor5>& z_parts) const;

 private:
  void check_input(const Tensor5& x) const;

  FlowConfig config_;
  std::vector<std::vector<std::unique_ptr<FlowLayer>>> levels_;
  std::vector<Shape5> topology_;
  ParameterSet params_, buffers_;
};

// Buffers and parameters in one set, for checkpoints.
void save_flow(const std::filesystem::path& dir, const FlowStack& stack, Metadata meta);
FlowStack load_flow(const std::filesystem::path& dir);

struct FlowTrainOptions {
  double lr = 5e-4;
  double lr_min = 0.0;
  int batch_size = 8;
  int epochs = 1;
  long max_steps = -1;  // overrides epochs when positive
  std::uint64_t seed = 0;
  // Abort when batch NLL exceeds initial + factor * max(|initial|, 1).
  double divergence_factor = 9.0;
  std::function<void(long step, double nll)> on_step;
};

struct FlowTrainResult {
  std::vector<double> nll_curve;  // mean batch NLL per step
  long steps = 0;
};

// samples: (N, C, 1, H, W). ActNorm layers initialize on the first batch.
FlowTrainResult train_flow(FlowStack& stack, const Tensor5& samples, const FlowTrainOptions& opts);

// Per-sample NLL (no gradient), evaluated in chunks of `chunk` samples.
std::vector<double> evaluate_nll(const FlowStack& stack, const Tensor5& samples,
                                 std::int64_t chunk = 256);

}  // namespace itae
