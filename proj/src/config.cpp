#include "itae/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "itae/errors.hpp"

namespace itae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(T RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& v) { c.*m = parse_number<T>("value", v); },
          [m](const RunConfig& c) { return format_number(c.*m); }};
}

Field flag(bool RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& v) { c.*m = parse_bool("value", v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Field text(std::string RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; }};
}

// Order here is the serialization order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"dataset", text(&RunConfig::dataset)},
      {"labels", text(&RunConfig::labels)},
      {"out_dir", text(&RunConfig::out_dir)},
      {"clip_length", number(&RunConfig::clip_length)},
      {"tau", number(&RunConfig::tau)},
      {"height", number(&RunConfig::height)},
      {"width", number(&RunConfig::width)},
      {"clip_stride", number(&RunConfig::clip_stride)},
      {"color", text(&RunConfig::color)},
      {"skip_unreadable", flag(&RunConfig::skip_unreadable)},
      {"width_scale", number(&RunConfig::width_scale)},
      {"leaky_slope", number(&RunConfig::leaky_slope)},
      {"use_dynamic", flag(&RunConfig::use_dynamic)},
      {"use_lateral", flag(&RunConfig::use_lateral)},
      {"itae_lr", number(&RunConfig::itae_lr)},
      {"itae_lr_min", number(&RunConfig::itae_lr_min)},
      {"itae_batch", number(&RunConfig::itae_batch)},
      {"itae_epochs", number(&RunConfig::itae_epochs)},
      {"itae_max_steps", number(&RunConfig::itae_max_steps)},
      {"flow_k", number(&RunConfig::flow_k)},
      {"flow_l", number(&RunConfig::flow_l)},
      {"flow_hidden", number(&RunConfig::flow_hidden)},
      {"flow_squeeze", flag(&RunConfig::flow_squeeze)},
      {"nf_lr", number(&RunConfig::nf_lr)},
      {"nf_lr_min", number(&RunConfig::nf_lr_min)},
      {"nf_batch", number(&RunConfig::nf_batch)},
      {"nf_epochs", number(&RunConfig::nf_epochs)},
      {"nf_max_steps", number(&RunConfig::nf_max_steps)},
      {"nf_paths",
       {[](RunConfig& c, const std::string& v) { c.nf_paths = parse_nf_paths(v); },
        [](const RunConfig& c) { return to_string(c.nf_paths); }}},
      {"patch", number(&RunConfig::patch)},
      {"patch_stride", number(&RunConfig::patch_stride)},
      {"lambda", number(&RunConfig::lambda)},
      {"normalize_recon", flag(&RunConfig::normalize_recon)},
      {"synth_frames", number(&RunConfig::synth_frames)},
      {"synth_videos", number(&RunConfig::synth_videos)},
      {"synth_canvas", number(&RunConfig::synth_canvas)},
      {"synth_objects", number(&RunConfig::synth_objects)},
      {"synth_speed_min", number(&RunConfig::synth_speed_min)},
      {"synth_speed_max", number(&RunConfig::synth_speed_max)},
      {"synth_noise", number(&RunConfig::synth_noise)},
      {"synth_anomalies", text(&RunConfig::synth_anomalies)},
      {"seed", number(&RunConfig::seed)},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return &f;
  }
  return nullptr;
}

std::vector<AnomalySpan> parse_spans(const std::string& text) {
  std::vector<AnomalySpan> spans;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const auto dash = item.find('-', colon == std::string::npos ? 0 : colon);
    if (colon == std::string::npos || dash == std::string::npos) {
      throw ConfigError("synth_anomalies: expected mode:start-end, got '" + item + "'");
    }
    AnomalySpan s;
    s.mode = parse_anomaly_mode(item.substr(0, colon));
    s.start = parse_number<std::int64_t>("synth_anomalies", item.substr(colon + 1, dash - colon - 1));
    s.end = parse_number<std::int64_t>("synth_anomalies", item.substr(dash + 1));
    spans.push_back(s);
  }
  return spans;
}

}  // namespace

std::string to_string(NfPaths p) {
  switch (p) {
    case NfPaths::kNone: return "none";
    case NfPaths::kStatic: return "static";
    case NfPaths::kDynamic: return "dynamic";
    case NfPaths::kBoth: return "both";
  }
  return "both";
}

NfPaths parse_nf_paths(const std::string& text) {
  if (text == "none") return NfPaths::kNone;
  if (text == "static") return NfPaths::kStatic;
  if (text == "dynamic") return NfPaths::kDynamic;
  if (text == "both") return NfPaths::kBoth;
  throw ConfigError("nf_paths must be none, static, dynamic or both, got '" + text + "'");
}

void RunConfig::validate(bool needs_dataset) const {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  if (needs_dataset) {
    need(!dataset.empty(), "dataset path is missing");
    need(dataset.empty() || std::filesystem::exists(dataset), "dataset " + dataset + " does not exist");
  }
  need(tau == 1 || tau == 2 || tau == 4, "tau must be 1, 2 or 4");
  need(clip_length > 0 && tau > 0 && clip_length % tau == 0,
       "clip_length " + std::to_string(clip_length) + " not divisible by tau " + std::to_string(tau));
  need(height >= 4 && width >= 4 && height % 4 == 0 && width % 4 == 0, "height and width must be divisible by 4");
  if (height % 4 == 0 && width % 4 == 0 && flow_l >= 1 && flow_l < 16 && flow_squeeze) {
    const int f = 1 << flow_l;
    need((height / 4) % f == 0 && (width / 4) % f == 0,
         "feature maps " + std::to_string(height / 4) + "x" + std::to_string(width / 4) +
             " not divisible by 2^flow_l = " + std::to_string(f));
  }
  need(clip_stride >= 1, "clip_stride must be positive");
  need(color == "gray" || color == "rgb", "color must be gray or rgb");
  need(width_scale > 0, "width_scale must be positive");
  need(itae_lr >= 0 && itae_lr_min >= 0 && nf_lr >= 0 && nf_lr_min >= 0, "learning rates must be non-negative");
  need(itae_batch >= 1 && nf_batch >= 1, "batch sizes must be positive");
  need(itae_epochs >= 1 && nf_epochs >= 1, "epochs must be positive");
  need(flow_k >= 1 && flow_l >= 1 && flow_hidden >= 1, "flow_k, flow_l and flow_hidden must be positive");
  need(use_dynamic || nf_paths == NfPaths::kNone || nf_paths == NfPaths::kStatic,
       "nf_paths " + to_string(nf_paths) + " needs the dynamic encoder (use_dynamic = true)");
  need(patch >= 1 && patch <= std::min(height, width) && patch_stride >= 1,
       "patch must lie in [1, min(height, width)] and patch_stride must be positive");
  need(lambda >= 0, "lambda must be non-negative");
  need(synth_frames >= clip_length, "synth_frames must be at least clip_length");
  need(synth_videos >= 1 && synth_objects >= 1 && synth_canvas >= 8, "synthetic video, object and canvas counts too small");
  need(synth_speed_min > 0 && synth_speed_max >= synth_speed_min, "synthetic speed range invalid");
  try {
    anomaly_spans();
  } catch (const ConfigError& e) {
    errs.push_back(e.what());
  }
  if (!errs.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

ItaeConfig RunConfig::itae() const {
  ItaeConfig c;
  c.in_channels = color == "rgb" ? 3 : 1;
  c.clip_length = clip_length;
  c.tau = tau;
  c.height = height;
  c.width = width;
  c.width_scale = width_scale;
  c.leaky_slope = leaky_slope;
  c.use_dynamic = use_dynamic;
  c.use_lateral = use_lateral;
  c.seed = seed;
  return c;
}

FlowConfig RunConfig::flow(std::int64_t channels) const {
  FlowConfig c;
  c.channels = channels;
  c.height = height / 4;
  c.width = width / 4;
  c.steps_per_level = flow_k;
  c.levels = flow_l;
  c.hidden = flow_hidden;
  c.squeeze = flow_squeeze;
  c.seed = seed + static_cast<std::uint64_t>(channels);
  return c;
}

ClipSpec RunConfig::clip_spec(const std::string& source) const {
  ClipSpec s;
  s.source = source;
  s.clip_length = clip_length;
  s.tau = tau;
  s.stride = clip_stride;
  s.height = height;
  s.width = width;
  s.color = color == "rgb" ? ColorMode::kRgb : ColorMode::kGray;
  s.skip_unreadable = skip_unreadable;
  return s;
}

SyntheticSceneConfig RunConfig::scene(std::uint64_t seed_offset) const {
  SyntheticSceneConfig s;
  s.canvas = synth_canvas;
  s.objects = synth_objects;
  s.speed_min = synth_speed_min;
  s.speed_max = synth_speed_max;
  s.noise_sigma = synth_noise;
  s.seed = seed + seed_offset;
  return s;
}

std::vector<AnomalySpan> RunConfig::anomaly_spans() const { return parse_spans(synth_anomalies); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    if (msg.rfind("value", 0) == 0) msg = key + msg.substr(5);
    throw ConfigError(msg);
  }
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  return f->get(cfg);
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::vector<std::string> errs;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errs.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      errs.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!errs.empty()) {
    std::string msg = "config errors:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config file " + path.string());
  f << serialize(cfg);
}

std::vector<std::string> preset_names() { return {"ucsd", "cuhk", "st", "desk"}; }

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    c.clip_length = 8;
    c.height = c.width = 64;
    c.width_scale = 0.25;
    c.itae_lr = 2e-3;
    c.itae_batch = 2;
    c.flow_k = 4;
    c.flow_l = 2;
    c.nf_lr = 1e-3;
    c.nf_batch = 64;
    c.lambda = 0.3;
    return c;
  }
  c.clip_length = 16;
  c.flow_k = 32;
  c.flow_l = 3;
  if (name == "ucsd") {
    // original frame size, grayscale
    c.height = 240;
    c.width = 360;
    c.flow_l = 1;
    c.itae_batch = 2;
    c.itae_lr = 1e-3;
    c.nf_batch = 8;
    c.nf_lr = 5e-4;
    c.lambda = 0.3;
  } else if (name == "cuhk" || name == "st") {
    c.height = c.width = 256;
    c.color = "rgb";
    c.itae_lr = 1e-2;
    c.itae_batch = name == "st" ? 8 : 2;
    c.nf_batch = name == "st" ? 8 : 5;
    c.nf_lr = name == "st" ? 1e-4 : 5e-4;
    c.lambda = name == "st" ? 0.7 : 0.1;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected ucsd, cuhk, st or desk)");
  }
  return c;
}

}  // namespace itae
