#include "itae/itae_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "itae/errors.hpp"
#include "itae/ops.hpp"
#include "itae/optim.hpp"

namespace itae {

namespace {

constexpr std::int64_t kStaticWidths[4] = {96, 128, 256, 256};
constexpr std::int64_t kDynamicWidths[4] = {12, 16, 32, 32};
constexpr std::int64_t kFusionWidth = 256;
constexpr std::int64_t kDecoderWidths[3] = {256, 128, 96};

std::int64_t scaled(std::int64_t base, double factor) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(base) * factor));
}

Tensor5 apply_layer(const ItaeModel& model, const std::string& name, const Tensor5& x) {
  const LayerSpec& spec = model.layer(name);
  const Tensor5& w = model.parameters().get(name + ".weight");
  const Tensor5& b = model.parameters().get(name + ".bias");
  Tensor5 y = spec.kind == LayerKind::kConv
                  ? conv3d(x, w, spec.stride, spec.padding)
                  : conv_transpose3d(x, w, spec.stride, spec.padding, spec.output_padding);
  return bias_add(y, b);
}

}  // namespace

void VideoClip::validate() const {
  if (!frames.defined()) throw ConfigError("clip has no frames");
  if (tau < 1 || length() % tau != 0) {
    throw ConfigError("clip length " + std::to_string(length()) + " not divisible by tau " +
                      std::to_string(tau));
  }
  for (double v : frames.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("clip pixel value outside [0,1]");
  }
}

void ItaeConfig::validate() const {
  std::vector<std::string> errs;
  if (in_channels < 1) errs.push_back("in_channels must be positive");
  if (tau != 1 && tau != 2 && tau != 4) errs.push_back("tau must be 1, 2 or 4");
  if (tau >= 1 && (clip_length < 1 || clip_length % tau != 0)) {
    errs.push_back("T=" + std::to_string(clip_length) + " not divisible by tau=" +
                   std::to_string(tau));
  }
  if (height < 4 || height % 4 != 0 || width < 4 || width % 4 != 0) {
    errs.push_back("frame size must be divisible by 4");
  }
  if (!(width_scale > 0.0)) errs.push_back("width_scale must be positive");
  if (!errs.empty()) {
    std::string msg = "invalid ITAE config:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

std::string ItaeConfig::fingerprint() const {
  std::ostringstream os;
  os << "itae:c=" << in_channels << ",T=" << clip_length << ",tau=" << tau << ",h=" << height
     << ",w=" << width << ",ws=" << width_scale << ",dyn=" << use_dynamic
     << ",lat=" << use_lateral;
  return os.str();
}

ItaeModel::ItaeModel(const ItaeConfig& config) : config_(config) {
  config_.validate();
  const double ws = config_.width_scale;
  const std::int64_t c_in = config_.in_channels;
  std::int64_t s[4], d[4];
  for (int i = 0; i < 4; ++i) {
    s[i] = scaled(kStaticWidths[i], ws);
    d[i] = scaled(kDynamicWidths[i], ws);
  }
  const bool dyn = config_.use_dynamic;
  const bool lat = dyn && config_.use_lateral;
  const std::int64_t tau = config_.tau;
  std::uint64_t counter = 0;

  const Triple k133{1, 3, 3}, k333{3, 3, 3}, k533{5, 3, 3};
  add_layer({"static.conv1", LayerKind::kConv, c_in, s[0], k133, {1, 2, 2}, {0, 1, 1}, {}}, counter);
  add_layer({"static.conv2", LayerKind::kConv, s[0] + (lat ? d[0] : 0), s[1], k133, {1, 2, 2}, {0, 1, 1}, {}},
            counter);
  add_layer({"static.conv3", LayerKind::kConv, s[1] + (lat ? d[1] : 0), s[2], k333, {1, 1, 1}, {1, 1, 1}, {}},
            counter);
  add_layer({"static.conv4", LayerKind::kConv, s[2] + (lat ? d[2] : 0), s[3], k333, {1, 1, 1}, {1, 1, 1}, {}},
            counter);
  if (dyn) {
    add_layer({"dynamic.conv1", LayerKind::kConv, c_in, d[0], k533, {1, 2, 2}, {2, 1, 1}, {}}, counter);
    add_layer({"dynamic.conv2", LayerKind::kConv, d[0], d[1], k333, {1, 2, 2}, {1, 1, 1}, {}}, counter);
    add_layer({"dynamic.conv3", LayerKind::kConv, d[1], d[2], k333, {1, 1, 1}, {1, 1, 1}, {}}, counter);
    add_layer({"dynamic.conv4", LayerKind::kConv, d[2], d[3], k333, {1, 1, 1}, {1, 1, 1}, {}}, counter);
    const Triple lk{5, 1, 1}, lstride{tau, 1, 1}, lpad{2, 0, 0};
    if (lat) {
      for (int i = 0; i < 3; ++i) {
        add_layer({"lateral" + std::to_string(i + 1), LayerKind::kConv, d[i], d[i], lk, lstride, lpad, {}},
                  counter);
      }
    }
    add_layer({"lateral4", LayerKind::kConv, d[3], d[3], lk, lstride, lpad, {}}, counter);
  }
  const std::int64_t fused = scaled(kFusionWidth, ws);
  add_layer({"fusion", LayerKind::kConv, s[3] + (dyn ? d[3] : 0), fused, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, {}},
            counter);
  // Two temporal doublings undo tau = 4; fewer for smaller tau.
  const std::int64_t t2 = tau >= 2 ? 2 : 1;
  const std::int64_t t3 = tau >= 4 ? 2 : 1;
  const std::int64_t dec[3] = {scaled(kDecoderWidths[0], ws), scaled(kDecoderWidths[1], ws),
                               scaled(kDecoderWidths[2], ws)};
  add_layer({"decoder.deconv1", LayerKind::kDeconv, fused, dec[0], k333, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}},
            counter);
  add_layer({"decoder.deconv2", LayerKind::kDeconv, dec[0], dec[1], k333, {t2, 2, 2}, {1, 1, 1}, {t2 - 1, 1, 1}},
            counter);
  add_layer({"decoder.deconv3", LayerKind::kDeconv, dec[1], dec[2], k333, {t3, 2, 2}, {1, 1, 1}, {t3 - 1, 1, 1}},
            counter);
  add_layer({"decoder.deconv4", LayerKind::kDeconv, dec[2], c_in, k333, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}},
            counter);
}

void ItaeModel::add_layer(LayerSpec spec, std::uint64_t& seed_counter) {
  const auto& k = spec.kernel;
  const Shape5 wshape = spec.kind == LayerKind::kConv
                            ? Shape5{spec.out_ch, spec.in_ch, k[0], k[1], k[2]}
                            : Shape5{spec.in_ch, spec.out_ch, k[0], k[1], k[2]};
  double fan_in = static_cast<double>(spec.in_ch * k[0] * k[1] * k[2]);
  if (spec.kind == LayerKind::kDeconv) {
    fan_in /= static_cast<double>(spec.stride[0] * spec.stride[1] * spec.stride[2]);
  }
  const double slope = config_.leaky_slope;
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::mt19937_64 rng(config_.seed * 0x9E3779B97F4A7C15ULL + (++seed_counter));
  params_.add(spec.name + ".weight", Tensor5::randn(wshape, rng, stddev));
  params_.add(spec.name + ".bias", Tensor5::zeros({1, spec.out_ch, 1, 1, 1}));
  layers_.push_back(std::move(spec));
}

const LayerSpec& ItaeModel::layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.name == name) return l;
  }
  throw ContractError("unknown layer: " + name);
}

std::int64_t ItaeModel::static_channels() const { return layer("static.conv4").out_ch; }

std::int64_t ItaeModel::dynamic_channels() const {
  return config_.use_dynamic ? layer("dynamic.conv4").out_ch : 0;
}

std::vector<std::pair<std::string, Shape5>> ItaeModel::trace_shapes(const Shape5& input) const {
  std::vector<std::pair<std::string, Shape5>> rows;
  auto run = [&](const std::string& name, const Shape5& in) {
    const LayerSpec& l = layer(name);
    const Shape5 w = l.kind == LayerKind::kConv
                         ? Shape5{l.out_ch, l.in_ch, l.kernel[0], l.kernel[1], l.kernel[2]}
                         : Shape5{l.in_ch, l.out_ch, l.kernel[0], l.kernel[1], l.kernel[2]};
    Shape5 out = l.kind == LayerKind::kConv
                     ? conv3d_shape(in, w, l.stride, l.padding)
                     : conv_transpose3d_shape(in, w, l.stride, l.padding, l.output_padding);
    rows.emplace_back(name, out);
    return out;
  };
  auto with_channels = [](Shape5 s, std::int64_t c) {
    s[kChannel] = c;
    return s;
  };
  const bool dyn = config_.use_dynamic;
  const bool lat = dyn && config_.use_lateral;
  Shape5 st = input;
  st[kTime] = input.t() / config_.tau;
  Shape5 d = input;
  for (int i = 1; i <= 4; ++i) {
    st = run("static.conv" + std::to_string(i), st);
    if (dyn) d = run("dynamic.conv" + std::to_string(i), d);
    if (lat && i < 4) {
      const Shape5 l = run("lateral" + std::to_string(i), d);
      st = with_channels(st, st.c() + l.c());
    }
  }
  Shape5 f = st;
  if (dyn) {
    const Shape5 l = run("lateral4", d);
    f = with_channels(st, st.c() + l.c());
  }
  f = run("fusion", f);
  for (int i = 1; i <= 4; ++i) f = run("decoder.deconv" + std::to_string(i), f);
  return rows;
}

void ItaeModel::zero_decoder() {
  for (auto& p : params_) {
    if (p.name.rfind("decoder.", 0) == 0 || p.name.rfind("fusion.", 0) == 0) {
      std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 0.0);
    }
  }
}

LatentFeatures encode(const ItaeModel& model, const Tensor5& frames) {
  const ItaeConfig& cfg = model.config();
  const Shape5& s = frames.shape();
  if (s.t() % cfg.tau != 0) {
    throw ConfigError("clip length " + std::to_string(s.t()) + " not divisible by tau " +
                      std::to_string(cfg.tau));
  }
  if (s.c() != cfg.in_channels || s.t() != cfg.clip_length || s.h() != cfg.height ||
      s.w() != cfg.width) {
    throw DimensionError("encode: clip " + s.str() + " does not match model input (N, " +
                         std::to_string(cfg.in_channels) + ", " + std::to_string(cfg.clip_length) +
                         ", " + std::to_string(cfg.height) + ", " + std::to_string(cfg.width) + ")");
  }
  const double slope = cfg.leaky_slope;
  const bool dyn = cfg.use_dynamic;
  const bool lat = dyn && cfg.use_lateral;
  Tensor5 st = slice(frames, kTime, 0, s.t() / cfg.tau, cfg.tau);
  Tensor5 d = frames;
  for (int i = 1; i <= 4; ++i) {
    const std::string idx = std::to_string(i);
    st = leaky_relu(apply_layer(model, "static.conv" + idx, st), slope);
    if (dyn) d = leaky_relu(apply_layer(model, "dynamic.conv" + idx, d), slope);
    if (lat && i < 4) {
      st = concat({st, apply_layer(model, "lateral" + idx, d)}, kChannel);
    }
  }
  LatentFeatures out;
  out.x_static = st;
  if (dyn) out.x_dynamic = d;
  return out;
}

LatentFeatures encode(const ItaeModel& model, const VideoClip& clip) {
  if (clip.tau != model.config().tau || clip.length() % clip.tau != 0) {
    throw ConfigError("clip sampling (T=" + std::to_string(clip.length()) + ", tau=" +
                      std::to_string(clip.tau) + ") incompatible with model tau " +
                      std::to_string(model.config().tau));
  }
  return encode(model, clip.frames);
}

Tensor5 decode(const ItaeModel& model, const LatentFeatures& latent) {
  const double slope = model.config().leaky_slope;
  Tensor5 f = latent.x_static;
  if (model.config().use_dynamic) {
    if (!latent.x_dynamic.defined()) throw ContractError("decode: missing dynamic features");
    Tensor5 aligned = apply_layer(model, "lateral4", latent.x_dynamic);
    if (aligned.shape().t() != f.shape().t()) {
      throw ContractError("decode: lateral mapping produced " + std::to_string(aligned.shape().t()) +
                          " steps, static path has " + std::to_string(f.shape().t()));
    }
    f = concat({f, aligned}, kChannel);
  }
  f = leaky_relu(apply_layer(model, "fusion", f), slope);
  for (int i = 1; i <= 3; ++i) {
    f = leaky_relu(apply_layer(model, "decoder.deconv" + std::to_string(i), f), slope);
  }
  return sigmoid(apply_layer(model, "decoder.deconv4", f));
}

Tensor5 reconstruct(const ItaeModel& model, const Tensor5& frames) {
  return decode(model, encode(model, frames));
}

ReconLossReport recon_loss(const Tensor5& input, const Tensor5& output, const MsSsimOptions& ssim) {
  if (input.shape() != output.shape()) {
    throw DimensionError("recon_loss: shape mismatch " + input.shape().str() + " vs " +
                         output.shape().str());
  }
  const Shape5& s = input.shape();
  Tensor5 diff = sub(input, output);
  Tensor5 l2 = mean_all(square(diff));
  Tensor5 ms_term = add_scalar(neg(mean_all(ms_ssim(input, output, ssim))), 1.0);

  Tensor5 grad_term = Tensor5::scalar(0.0);
  if (s.w() > 1) {
    Tensor5 gx = sub(slice(diff, kWidth, 1, s.w() - 1), slice(diff, kWidth, 0, s.w() - 1));
    grad_term = add(grad_term, mean_all(abs(gx)));
  }
  if (s.h() > 1) {
    Tensor5 gy = sub(slice(diff, kHeight, 1, s.h() - 1), slice(diff, kHeight, 0, s.h() - 1));
    grad_term = add(grad_term, mean_all(abs(gy)));
  }
  ReconLossReport rep;
  rep.total_tensor = add(add(l2, ms_term), grad_term);
  rep.l2 = l2.item();
  rep.ms_ssim = ms_term.item();
  rep.grad = grad_term.item();
  rep.total = rep.total_tensor.item();
  return rep;
}

void save_itae(const std::filesystem::path& dir, const ItaeModel& model, Metadata meta) {
  const ItaeConfig& c = model.config();
  meta["itae.fingerprint"] = c.fingerprint();
  meta["itae.in_channels"] = std::to_string(c.in_channels);
  meta["itae.clip_length"] = std::to_string(c.clip_length);
  meta["itae.tau"] = std::to_string(c.tau);
  meta["itae.height"] = std::to_string(c.height);
  meta["itae.width"] = std::to_string(c.width);
  std::ostringstream ws, slope;
  ws.precision(17);
  slope.precision(17);
  ws << c.width_scale;
  slope << c.leaky_slope;
  meta["itae.width_scale"] = ws.str();
  meta["itae.leaky_slope"] = slope.str();
  meta["itae.use_dynamic"] = c.use_dynamic ? "1" : "0";
  meta["itae.use_lateral"] = c.use_lateral ? "1" : "0";
  meta["itae.seed"] = std::to_string(c.seed);
  save_checkpoint(dir, model.parameters(), meta);
}

ItaeModel load_itae(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw ConfigError("ITAE checkpoint " + dir.string() + " lacks " + key);
    return it->second;
  };
  ItaeConfig c;
  c.in_channels = std::stoi(field("itae.in_channels"));
  c.clip_length = std::stoi(field("itae.clip_length"));
  c.tau = std::stoi(field("itae.tau"));
  c.height = std::stoi(field("itae.height"));
  c.width = std::stoi(field("itae.width"));
  c.width_scale = std::stod(field("itae.width_scale"));
  c.leaky_slope = std::stod(field("itae.leaky_slope"));
  c.use_dynamic = field("itae.use_dynamic") == "1";
  c.use_lateral = field("itae.use_lateral") == "1";
  c.seed = std::stoull(field("itae.seed"));
  ItaeModel model(c);
  if (field("itae.fingerprint") != c.fingerprint()) {
    throw ConfigError("ITAE checkpoint " + dir.string() + " fingerprint does not match its config");
  }
  model.parameters().load_from(ck.params);
  return model;
}

Tensor5 stack_clips(const std::vector<const VideoClip*>& clips) {
  if (clips.empty()) throw ContractError("stack_clips: empty batch");
  std::vector<Tensor5> parts;
  parts.reserve(clips.size());
  for (const auto* c : clips) parts.push_back(c->frames);
  NoGradGuard ng;
  return concat(parts, kBatch);
}

ItaeTrainResult train_itae(ItaeModel& model, const std::vector<VideoClip>& clips,
                           const ItaeTrainOptions& opts) {
  if (clips.empty()) throw ConfigError("train_itae: empty dataset");
  if (opts.batch_size < 1) throw ConfigError("train_itae: batch size must be positive");
  ParameterSet& params = model.parameters();
  params.set_requires_grad(true);
  Adam adam(params);

  const long n = static_cast<long>(clips.size());
  const long per_epoch = (n + opts.batch_size - 1) / opts.batch_size;
  const long total = opts.max_steps > 0 ? opts.max_steps : per_epoch * std::max(1, opts.epochs);
  const CosineSchedule schedule{opts.lr, opts.lr_min, total};
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);

  ItaeTrainResult result;
  std::vector<Tensor5> last_good = params.snapshot();
  for (long step = 0; step < total; ++step) {
    const long in_epoch = step % per_epoch;
    if (in_epoch == 0) std::shuffle(order.begin(), order.end(), rng);
    std::vector<const VideoClip*> batch;
    for (long i = in_epoch * opts.batch_size; i < std::min(n, (in_epoch + 1) * opts.batch_size); ++i) {
      batch.push_back(&clips[order[static_cast<std::size_t>(i)]]);
    }
    const Tensor5 frames = stack_clips(batch);

    GradTape::current().clear();
    params.zero_grad();
    ReconLossReport rep;
    try {
      rep = recon_loss(frames, reconstruct(model, frames));
      if (!std::isfinite(rep.total)) throw NumericError("ITAE loss is not finite");
    } catch (const NumericError& e) {
      GradTape::current().clear();
      params.restore(last_good);
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                         "; parameters restored to last good values");
    }
    backward(rep.total_tensor);
    adam.step(schedule.at(step));
    bool finite = true;
    for (const auto& p : params) finite = finite && p.value.all_finite();
    if (!finite) {
      params.restore(last_good);
      throw NumericError("ITAE update produced non-finite parameters at step " + std::to_string(step) +
                         "; parameters restored to last good values");
    }
    last_good = params.snapshot();
    result.loss_curve.push_back(rep.total);
    if (opts.on_step) opts.on_step(step, rep);
  }
  result.steps = total;
  params.zero_grad();
  params.set_requires_grad(false);
  return result;
}

}  // namespace itae
