#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "itae/checkpoint.hpp"
#include "itae/conv.hpp"
#include "itae/ms_ssim.hpp"
#include "itae/tensor.hpp"

namespace itae {

// T consecutive frames scaled to [0,1], shape (1, C, T, H, W).
struct VideoClip {
  Tensor5 frames;
  int tau = 4;
  std::string source_id;
  std::vector<std::int64_t> frame_indices;  // absolute index of each of the T frames

  std::int64_t length() const { return frames.shape().t(); }
  // Throws ConfigError when T % tau != 0 or pixel values leave [0,1].
  void validate() const;
};

struct ItaeConfig {
  int in_channels = 3;
  int clip_length = 16;  // T
  int tau = 4;           // static sampling rate, one of {1, 2, 4}
  int height = 256;
  int width = 256;
  // Multiplies every hidden channel width (static, dynamic, decoder).
  double width_scale = 1.0;
  double leaky_slope = 0.2;
  bool use_dynamic = true;  // false: static-encoder-only ablation
  bool use_lateral = true;  // encoder laterals after stages 1-3
  std::uint64_t seed = 0;

  void validate() const;
  // Stable text of the topology-defining fields.
  std::string fingerprint() const;
};

enum class LayerKind { kConv, kDeconv };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::int64_t in_ch = 0, out_ch = 0;
  Triple kernel{}, stride{1, 1, 1}, padding{}, output_padding{};
};

struct LatentFeatures {
  Tensor5 x_static;   // (N, Cs, T/tau, H/4, W/4)
  Tensor5 x_dynamic;  // (N, Cd, T, H/4, W/4); undefined for the static-only ablation
};

class ItaeModel {
 public:
  explicit ItaeModel(const ItaeConfig& config);

  const ItaeConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(const std::string& name) const;

  std::int64_t static_channels() const;
  std::int64_t dynamic_channels() const;

  // Output shape of every layer for an input of the given shape, computed with
  // the same shape rules the convolution kernels enforce.
  std::vector<std::pair<std::string, Shape5>> trace_shapes(const Shape5& input) const;

  void zero_decoder();

 private:
  void add_layer(LayerSpec spec, std::uint64_t& seed_counter);

  ItaeConfig config_;
  std::vector<LayerSpec> layers_;
  ParameterSet params_;
};

// frames: (N, C, T, H, W)
LatentFeatures encode(const ItaeModel& model, const Tensor5& frames);
LatentFeatures encode(const ItaeModel& model, const VideoClip& clip);
Tensor5 decode(const ItaeModel& model, const LatentFeatures& latent);
Tensor5 reconstruct(const ItaeModel& model, const Tensor5& frames);

struct ReconLossReport {
  double l2 = 0.0;
  double ms_ssim = 0.0;  // the 1 - MS-SSIM term
  double grad = 0.0;
  double total = 0.0;
  Tensor5 total_tensor;  // differentiable total
};

// L2 (mean squared error) + (1 - mean per-frame MS-SSIM) + gradient-difference
// loss, equally weighted.
ReconLossReport recon_loss(const Tensor5& input, const Tensor5& output,
                           const MsSsimOptions& ssim = {});

struct ItaeTrainOptions {
  double lr = 1e-3;
  double lr_min = 0.0;
  int batch_size = 2;
  int epochs = 1;
  long max_steps = -1;  // overrides epochs when positive
  std::uint64_t seed = 0;
  std::function<void(long step, const ReconLossReport&)> on_step;
};

struct ItaeTrainResult {
  std::vector<double> loss_curve;  // total loss per step
  long steps = 0;
};

// Adam with cosine-annealed step size. On a non-finite loss or update the
// parameters are restored to the last finite values and NumericError is thrown.
ItaeTrainResult train_itae(ItaeModel& model, const std::vector<VideoClip>& clips,
                           const ItaeTrainOptions& opts);

// Parameters plus the full config in the manifest metadata ("itae.*" keys).
void save_itae(const std::filesystem::path& dir, const ItaeModel& model, Metadata meta = {});
// Rebuilds the model from the stored config; throws ConfigError on missing keys.
ItaeModel load_itae(const std::filesystem::path& dir);

// Stacks clips along the batch axis.
Tensor5 stack_clips(const std::vector<const VideoClip*>& clips);

}  // namespace itae
