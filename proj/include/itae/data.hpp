#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "itae/itae_net.hpp"
#include "itae/tensor.hpp"

namespace itae {

// 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct Image {
  std::int64_t channels = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;
};

// Binary PGM (P5) / PPM (P6) with maxval 255. Throws std::runtime_error on
// anything else.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& img);

// Area (box) resampling of the spatial axes; exact block means for integer ratios.
Tensor5 area_resize(const Tensor5& x, std::int64_t height, std::int64_t width);

enum class ColorMode { kGray, kRgb };

struct ClipSpec {
  std::filesystem::path source;  // frame folder or packed tensor file (1, C, F, H, W)
  int clip_length = 8;           // T
  int tau = 4;
  int stride = 1;  // between clip starts
  std::int64_t height = 64;
  std::int64_t width = 64;
  ColorMode color = ColorMode::kGray;
  bool skip_unreadable = true;  // false: abort on the first bad frame

  void validate() const;
};

// Whole sequence after decoding, scaling to [0,1] and resizing.
struct FrameSequence {
  Tensor5 frames;  // (1, C, F, H, W)
  std::vector<std::int64_t> frame_indices;  // absolute index of each kept frame
  std::string source_id;
  std::int64_t total_frames = 0;  // including skipped ones
};

FrameSequence load_frames(const ClipSpec& spec);
// Sliding windows of T frames, `stride` apart, in order.
std::vector<VideoClip> make_clips(const FrameSequence& seq, int clip_length, int tau, int stride);
std::vector<VideoClip> load_clips(const ClipSpec& spec);

// SHA-256 over shapes, indices and pixel data of a clip stream.
std::string clip_stream_hash(const std::vector<VideoClip>& clips);

enum class AnomalyMode { kSpeed2, kShapeSwap, kReverse };
std::string to_string(AnomalyMode mode);
AnomalyMode parse_anomaly_mode(const std::string& text);

struct AnomalySpan {
  std::int64_t start = 0;  // [start, end)
  std::int64_t end = 0;
  AnomalyMode mode = AnomalyMode::kSpeed2;
};

struct SyntheticSceneConfig {
  std::int64_t canvas = 64;
  int objects = 3;           // one per horizontal lane
  double speed_min = 1.0;    // px/frame
  double speed_max = 1.5;
  double noise_sigma = 0.0;  // additive Gaussian, before 8-bit quantization
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticVideo {
  std::vector<Image> frames;
  std::vector<int> labels;  // 1 inside an anomaly span
};

// Objects move at constant velocity with wraparound over a fixed background.
// Normal objects are 8x8 squares; shape-swap draws a 16x4 bar (same area).
SyntheticVideo generate_synthetic(const SyntheticSceneConfig& config, std::int64_t n_frames,
                                  const std::vector<AnomalySpan>& spans);

// frame_00000.pgm ... plus labels.txt
// In-memory equivalent of write_synthetic followed by load_frames (gray).
FrameSequence to_sequence(const SyntheticVideo& video, const std::string& source_id = "synthetic");
void write_synthetic(const std::filesystem::path& dir, const SyntheticVideo& video);

// One 0/1 integer per line.
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);

}  // namespace itae
