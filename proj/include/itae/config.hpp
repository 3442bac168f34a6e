#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "itae/data.hpp"
#include "itae/flow.hpp"
#include "itae/itae_net.hpp"

namespace itae {

// Which flow models feed the likelihood term.
enum class NfPaths { kNone, kStatic, kDynamic, kBoth };
std::string to_string(NfPaths p);
NfPaths parse_nf_paths(const std::string& text);

// Every tunable of a run, serialized as flat "key = value" lines.
struct RunConfig {
  // data
  std::string dataset;
  std::string labels;  // optional label file for eval
  std::string out_dir = "run";
  int clip_length = 8;
  int tau = 4;
  int height = 64;
  int width = 64;
  int clip_stride = 1;
  std::string color = "gray";
  bool skip_unreadable = true;

  // step 1
  double width_scale = 1.0;
  double leaky_slope = 0.2;
  bool use_dynamic = true;
  bool use_lateral = true;
  double itae_lr = 1e-3;
  double itae_lr_min = 0.0;
  int itae_batch = 2;
  int itae_epochs = 1;
  long itae_max_steps = -1;

  // step 2
  int flow_k = 4;
  int flow_l = 2;
  int flow_hidden = 64;
  bool flow_squeeze = true;
  double nf_lr = 5e-4;
  double nf_lr_min = 0.0;
  int nf_batch = 8;
  int nf_epochs = 1;
  long nf_max_steps = -1;
  NfPaths nf_paths = NfPaths::kBoth;

  // scoring
  int patch = 16;
  int patch_stride = 4;
  double lambda = 0.3;
  bool normalize_recon = true;  // min-max R within each video before fusion

  // synthetic generator
  long synth_frames = 240;
  int synth_videos = 1;
  int synth_canvas = 64;
  int synth_objects = 3;
  double synth_speed_min = 1.0;
  double synth_speed_max = 1.5;
  double synth_noise = 0.0;
  std::string synth_anomalies;  // "speed2:40-60,shape-swap:100-120"

  std::uint64_t seed = 0;

  // Throws ConfigError listing every problem found. Commands that read the
  // dataset pass needs_dataset so a missing path joins the same report.
  void validate(bool needs_dataset = false) const;

  ItaeConfig itae() const;
  FlowConfig flow(std::int64_t channels) const;
  ClipSpec clip_spec(const std::string& source) const;
  SyntheticSceneConfig scene(std::uint64_t seed_offset = 0) const;
  std::vector<AnomalySpan> anomaly_spans() const;

  bool operator==(const RunConfig&) const = default;
};

std::vector<std::string> config_keys();
// Sets one key from text; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

std::string serialize(const RunConfig& cfg);
// Blank lines and '#' comments are ignored. All errors are reported at once.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

// ucsd, cuhk, st (benchmark-scale hyperparameters) and desk (64x64 synthetic).
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace itae
