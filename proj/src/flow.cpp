#include "itae/flow.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "itae/conv.hpp"
#include "itae/errors.hpp"
#include "itae/ops.hpp"
#include "itae/optim.hpp"

namespace itae {

using detail::TensorImpl;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t k) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Broadcasts a (1,1,1,1,1) scalar to one value per sample.
Tensor5 per_sample(const Tensor5& scalar, std::int64_t n) {
  return add(Tensor5::zeros({n, 1, 1, 1, 1}), scalar);
}

RowMat as_matrix(const Tensor5& t, std::int64_t rows, std::int64_t cols) {
  RowMat m(rows, cols);
  std::copy(t.data().begin(), t.data().end(), m.data());
  return m;
}

Tensor5 conv_weight(const RowMat& m) {
  const std::int64_t c = m.rows();
  return Tensor5({c, c, 1, 1, 1}, std::vector<double>(m.data(), m.data() + m.size()));
}

Tensor5 gather_samples(const Tensor5& x, const std::vector<std::size_t>& idx, std::size_t from,
                       std::size_t to) {
  Shape5 s = x.shape();
  const auto per = static_cast<std::size_t>(s.sample_size());
  s[kBatch] = static_cast<std::int64_t>(to - from);
  std::vector<double> out(per * (to - from));
  auto src = x.data();
  for (std::size_t i = from; i < to; ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>((i - from) * per));
  }
  return Tensor5(s, std::move(out));
}

}  // namespace

// ---- ActNorm ----

ActNorm::ActNorm(std::int64_t channels)
    : logs_(Shape5{1, channels, 1, 1, 1}, 0.0),
      bias_(Shape5{1, channels, 1, 1, 1}, 0.0),
      initialized_(Shape5{}, 0.0) {}

FlowLayerOutput ActNorm::forward(const Tensor5& x) const {
  const Shape5& s = x.shape();
  Tensor5 y = channel_affine(x, exp(logs_), bias_);
  Tensor5 ld = scale(sum_all(logs_), static_cast<double>(s.spatial_size()));
  return {y, per_sample(ld, s.n())};
}

FlowLayerOutput ActNorm::inverse(const Tensor5& y) const {
  const Shape5& s = y.shape();
  Tensor5 inv_scale = exp(neg(logs_));
  Tensor5 x = channel_affine(y, inv_scale, neg(mul(bias_, inv_scale)));
  Tensor5 ld = scale(sum_all(logs_), -static_cast<double>(s.spatial_size()));
  return {x, per_sample(ld, s.n())};
}

void ActNorm::collect(ParameterSet& params, ParameterSet& buffers, const std::string& prefix) {
  params.add(prefix + "logs", logs_);
  params.add(prefix + "bias", bias_);
  buffers.add(prefix + "initialized", initialized_);
}

void ActNorm::initialize(const Tensor5& x, double eps) {
  const Shape5& s = x.shape();
  const std::int64_t c = s.c();
  if (c != logs_.shape().c()) throw DimensionError("actnorm init: channel mismatch " + s.str());
  const std::int64_t per = s.spatial_size();
  auto xd = x.data();
  auto logs = logs_.mutable_data();
  auto bias = bias_.mutable_data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t n = 0; n < s.n(); ++n) {
      const double* p = xd.data() + (n * c + ch) * per;
      for (std::int64_t i = 0; i < per; ++i) {
        sum += p[i];
        sq += p[i] * p[i];
      }
    }
    const double count = static_cast<double>(s.n() * per);
    const double mu = sum / count;
    const double sd = std::sqrt(std::max(0.0, sq / count - mu * mu));
    logs[static_cast<std::size_t>(ch)] = -std::log(sd + eps);
    bias[static_cast<std::size_t>(ch)] = -mu / (sd + eps);
  }
  initialized_.mutable_data()[0] = 1.0;
}

// ---- InvConv1x1 ----

InvConv1x1::InvConv1x1(std::int64_t channels, std::uint64_t seed)
    : channels_(channels),
      lower_(Shape5{1, 1, 1, channels, channels}, 0.0),
      upper_(Shape5{1, 1, 1, channels, channels}, 0.0),
      log_s_(Shape5{1, 1, 1, 1, channels}, 0.0),
      perm_(Shape5{1, 1, 1, channels, channels}, 0.0),
      sign_(Shape5{1, 1, 1, 1, channels}, 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMat a(channels, channels);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  const RowMat q = Eigen::HouseholderQR<RowMat>(a).householderQ();
  // P q = L U  =>  q = P^T L U
  Eigen::PartialPivLU<RowMat> lu(q);
  const RowMat packed = lu.matrixLU();
  const RowMat p = RowMat(lu.permutationP().transpose());
  for (std::int64_t i = 0; i < channels; ++i) {
    for (std::int64_t j = 0; j < channels; ++j) {
      const auto k = static_cast<std::size_t>(i * channels + j);
      if (j < i) lower_.mutable_data()[k] = packed(i, j);
      if (j > i) upper_.mutable_data()[k] = packed(i, j);
      perm_.mutable_data()[k] = p(i, j);
    }
    const double d = packed(i, i);
    sign_.mutable_data()[static_cast<std::size_t>(i)] = d < 0 ? -1.0 : 1.0;
    log_s_.mutable_data()[static_cast<std::size_t>(i)] = std::log(std::abs(d));
  }
}

Tensor5 InvConv1x1::weight() const {
  const std::int64_t c = channels_;
  for (double v : log_s_.data()) {
    if (!std::isfinite(v) || std::exp(v) == 0.0 || !std::isfinite(std::exp(v))) {
      throw NumericError("invertible 1x1 conv: U diagonal is singular or overflows");
    }
  }
  const RowMat p = as_matrix(perm_, c, c);
  RowMat lm = as_matrix(lower_, c, c).triangularView<Eigen::StrictlyLower>();
  lm.diagonal().setOnes();
  RowMat um = as_matrix(upper_, c, c).triangularView<Eigen::StrictlyUpper>();
  auto sgn = sign_.data();
  auto ls = log_s_.data();
  for (std::int64_t i = 0; i < c; ++i) {
    um(i, i) = sgn[static_cast<std::size_t>(i)] * std::exp(ls[static_cast<std::size_t>(i)]);
  }
  const RowMat w = p * lm * um;
  TensorImpl* li = lower_.impl();
  TensorImpl* ui = upper_.impl();
  TensorImpl* si = log_s_.impl();
  return detail::make_result(
      Shape5{c, c, 1, 1, 1}, std::vector<double>(w.data(), w.data() + w.size()),
      {lower_, upper_, log_s_}, [=](TensorImpl* o) {
        return [=]() {
          RowMat dw(c, c);
          std::copy(o->grad.begin(), o->grad.end(), dw.data());
          const RowMat da = p.transpose() * dw;
          const RowMat dl = da * um.transpose();
          const RowMat du = lm.transpose() * da;
          if (li->requires_grad) {
            auto& g = li->ensure_grad();
            for (std::int64_t i = 0; i < c; ++i)
              for (std::int64_t j = 0; j < i; ++j) g[static_cast<std::size_t>(i * c + j)] += dl(i, j);
          }
          if (ui->requires_grad) {
            auto& g = ui->ensure_grad();
            for (std::int64_t i = 0; i < c; ++i)
              for (std::int64_t j = i + 1; j < c; ++j) g[static_cast<std::size_t>(i * c + j)] += du(i, j);
          }
          if (si->requires_grad) {
            auto& g = si->ensure_grad();
            for (std::int64_t i = 0; i < c; ++i) g[static_cast<std::size_t>(i)] += du(i, i) * um(i, i);
          }
        };
      });
}

FlowLayerOutput InvConv1x1::forward(const Tensor5& x) const {
  const Shape5& s = x.shape();
  Tensor5 y = conv3d(x, weight(), {1, 1, 1}, {0, 0, 0});
  Tensor5 ld = scale(sum_all(log_s_), static_cast<double>(s.spatial_size()));
  return {y, per_sample(ld, s.n())};
}

FlowLayerOutput InvConv1x1::inverse(const Tensor5& y) const {
  const Shape5& s = y.shape();
  Tensor5 w_inv;
  {
    NoGradGuard guard;
    const RowMat w = as_matrix(weight(), channels_, channels_);
    w_inv = conv_weight(RowMat(w.inverse()));
  }
  Tensor5 x = conv3d(y, w_inv, {1, 1, 1}, {0, 0, 0});
  Tensor5 ld = scale(sum_all(log_s_), -static_cast<double>(s.spatial_size()));
  return {x, per_sample(ld, s.n())};
}

void InvConv1x1::collect(ParameterSet& params, ParameterSet& buffers, const std::string& prefix) {
  params.add(prefix + "lower", lower_);
  params.add(prefix + "upper", upper_);
  params.add(prefix + "log_s", log_s_);
  buffers.add(prefix + "perm", perm_);
  buffers.add(prefix + "sign", sign_);
}

// ---- AffineCoupling ----

AffineCoupling::AffineCoupling(std::int64_t channels, std::int64_t hidden, std::uint64_t seed)
    : channels_(channels), split_(channels / 2) {
  if (channels < 2) throw ConfigError("coupling needs at least 2 channels, got " + std::to_string(channels));
  std::mt19937_64 rng(seed);
  const std::int64_t out = 2 * (channels - split_);
  net_.add("c1.weight", Tensor5::randn({hidden, split_, 1, 3, 3}, rng, 0.05));
  net_.add("c1.bias", Tensor5::zeros({1, hidden, 1, 1, 1}));
  net_.add("c2.weight", Tensor5::randn({hidden, hidden, 1, 1, 1}, rng, 0.05));
  net_.add("c2.bias", Tensor5::zeros({1, hidden, 1, 1, 1}));
  net_.add("c3.weight", Tensor5::zeros({out, hidden, 1, 3, 3}));
  net_.add("c3.bias", Tensor5::zeros({1, out, 1, 1, 1}));
}

AffineCoupling::ShiftScale AffineCoupling::condition(const Tensor5& xa) const {
  const Triple one{1, 1, 1};
  Tensor5 h = relu(bias_add(conv3d(xa, net_.get("c1.weight"), one, {0, 1, 1}), net_.get("c1.bias")));
  h = relu(bias_add(conv3d(h, net_.get("c2.weight"), one, {0, 0, 0}), net_.get("c2.bias")));
  h = bias_add(conv3d(h, net_.get("c3.weight"), one, {0, 1, 1}), net_.get("c3.bias"));
  const std::int64_t cb = channels_ - split_;
  return {slice(h, kChannel, 0, cb), scale(tanh(slice(h, kChannel, cb, cb)), 2.0)};
}

FlowLayerOutput AffineCoupling::forward(const Tensor5& x) const {
  Tensor5 xa = slice(x, kChannel, 0, split_);
  Tensor5 xb = slice(x, kChannel, split_, channels_ - split_);
  auto [shift, log_scale] = condition(xa);
  Tensor5 yb = add(mul(xb, exp(log_scale)), shift);
  return {concat({xa, yb}, kChannel), sum(log_scale, {kChannel, kTime, kHeight, kWidth})};
}

FlowLayerOutput AffineCoupling::inverse(const Tensor5& y) const {
  Tensor5 ya = slice(y, kChannel, 0, split_);
  Tensor5 yb = slice(y, kChannel, split_, channels_ - split_);
  auto [shift, log_scale] = condition(ya);
  Tensor5 xb = mul(sub(yb, shift), exp(neg(log_scale)));
  return {concat({ya, xb}, kChannel), neg(sum(log_scale, {kChannel, kTime, kHeight, kWidth}))};
}

void AffineCoupling::collect(ParameterSet& params, ParameterSet&, const std::string& prefix) {
  for (auto& p : net_) params.add(prefix + p.name, p.value);
}

// ---- Squeeze ----

FlowLayerOutput Squeeze::forward(const Tensor5& x) const {
  return {space_to_channel(x), Tensor5::zeros({x.shape().n(), 1, 1, 1, 1})};
}

FlowLayerOutput Squeeze::inverse(const Tensor5& y) const {
  return {channel_to_space(y), Tensor5::zeros({y.shape().n(), 1, 1, 1, 1})};
}

// ---- FlowConfig ----

void FlowConfig::validate() const {
  std::vector<std::string> errors;
  if (channels < 1) errors.push_back("channels must be >= 1");
  if (height < 1 || width < 1) errors.push_back("height and width must be >= 1");
  if (steps_per_level < 1) errors.push_back("steps per level (K) must be >= 1");
  if (levels < 1) errors.push_back("levels (L) must be >= 1");
  if (hidden < 1) errors.push_back("hidden width must be >= 1");
  if (errors.empty()) {
    std::int64_t c = channels, h = height, w = width;
    for (int l = 0; l < levels; ++l) {
      if (squeeze) {
        if (h % 2 != 0 || w % 2 != 0) {
          errors.push_back("level " + std::to_string(l) + ": " + std::to_string(h) + "x" +
                           std::to_string(w) + " map cannot be squeezed 2x2");
          break;
        }
        c *= 4;
        h /= 2;
        w /= 2;
      }
      if (c < 2) {
        errors.push_back("level " + std::to_string(l) + ": coupling needs >= 2 channels, has " +
                         std::to_string(c));
        break;
      }
      if (l + 1 < levels) c /= 2;
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid flow config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::string FlowConfig::fingerprint() const {
  std::ostringstream os;
  os << "flow:c=" << channels << ",h=" << height << ",w=" << width << ",K=" << steps_per_level
     << ",L=" << levels << ",hidden=" << hidden << ",squeeze=" << (squeeze ? 1 : 0);
  return os.str();
}

Tensor5 gaussian_log_prob(const Tensor5& z) {
  const double d = static_cast<double>(z.shape().sample_size());
  return add_scalar(scale(sum(square(z), {kChannel, kTime, kHeight, kWidth}), -0.5),
                    -0.5 * d * std::log(2.0 * std::numbers::pi));
}

double FlowOutput::mean_nll() const {
  auto v = nll.data();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double FlowOutput::bits_per_dim() const {
  return mean_nll() / (static_cast<double>(dims) * std::numbers::ln2);
}

// ---- FlowStack ----

FlowStack::FlowStack(const FlowConfig& config) : config_(config) {
  config_.validate();
  std::int64_t c = config_.channels, h = config_.height, w = config_.width;
  std::uint64_t counter = 0;
  for (int l = 0; l < config_.levels; ++l) {
    auto& level = levels_.emplace_back();
    const std::string lp = "level" + std::to_string(l) + ".";
    if (config_.squeeze) {
      level.push_back(std::make_unique<Squeeze>());
      c *= 4;
      h /= 2;
      w /= 2;
    }
    for (int k = 0; k < config_.steps_per_level; ++k) {
      const std::string sp = lp + "step" + std::to_string(k) + ".";
      level.push_back(std::make_unique<ActNorm>(c));
      level.back()->collect(params_, buffers_, sp + "actnorm.");
      level.push_back(std::make_unique<InvConv1x1>(c, mix_seed(config_.seed, counter++)));
      level.back()->collect(params_, buffers_, sp + "invconv.");
      level.push_back(
          std::make_unique<AffineCoupling>(c, config_.hidden, mix_seed(config_.seed, counter++)));
      level.back()->collect(params_, buffers_, sp + "coupling.");
    }
    if (l + 1 < config_.levels) {
      topology_.push_back({1, c - c / 2, 1, h, w});
      c /= 2;
    }
  }
  topology_.push_back({1, c, 1, h, w});
}

std::size_t FlowStack::layer_count() const {
  std::size_t n = 0;
  for (const auto& l : levels_) n += l.size();
  return n;
}

FlowLayer& FlowStack::layer(std::size_t level, std::size_t index) {
  return *levels_.at(level).at(index);
}

void FlowStack::check_input(const Tensor5& x) const {
  const Shape5& s = x.shape();
  if (s.c() != config_.channels || s.t() != 1 || s.h() != config_.height ||
      s.w() != config_.width || s.n() < 1) {
    throw DimensionError("flow input " + s.str() + " does not match expected Nx" +
                         Shape5{1, config_.channels, 1, config_.height, config_.width}.str().substr(2));
  }
}

void FlowStack::initialize(const Tensor5& batch) {
  check_input(batch);
  NoGradGuard guard;
  Tensor5 h = batch;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    for (auto& layer : levels_[l]) {
      if (auto* an = dynamic_cast<ActNorm*>(layer.get()); an && !an->initialized()) {
        an->initialize(h);
      }
      h = layer->forward(h).y;
    }
    if (l + 1 < levels_.size()) h = slice(h, kChannel, 0, h.shape().c() / 2);
  }
}

bool FlowStack::initialized() const {
  for (const auto& level : levels_) {
    for (const auto& layer : level) {
      if (auto* an = dynamic_cast<const ActNorm*>(layer.get()); an && !an->initialized()) return false;
    }
  }
  return true;
}

FlowOutput FlowStack::forward_nll(const Tensor5& x) const {
  check_input(x);
  FlowOutput out;
  out.dims = dims();
  Tensor5 h = x;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    for (const auto& layer : levels_[l]) {
      FlowLayerOutput r = layer->forward(h);
      h = r.y;
      out.logdet = out.logdet.defined() ? add(out.logdet, r.logdet) : r.logdet;
      out.layer_logdets.push_back(r.logdet);
    }
    if (l + 1 < levels_.size()) {
      const std::int64_t c = h.shape().c();
      out.z_parts.push_back(slice(h, kChannel, c / 2, c - c / 2));
      h = slice(h, kChannel, 0, c / 2);
    }
  }
  out.z_parts.push_back(h);
  for (const auto& z : out.z_parts) {
    Tensor5 lp = gaussian_log_prob(z);
    out.log_prior = out.log_prior.defined() ? add(out.log_prior, lp) : lp;
  }
  out.nll = neg(add(out.log_prior, out.logdet));
  return out;
}

FlowInverseOutput FlowStack::inverse(const std::vector<Tensor5>& z_parts) const {
  if (z_parts.size() != topology_.size()) {
    throw DimensionError("flow inverse: expected " + std::to_string(topology_.size()) +
                         " latent parts, got " + std::to_string(z_parts.size()));
  }
  const std::int64_t n = z_parts.front().shape().n();
  for (std::size_t i = 0; i < z_parts.size(); ++i) {
    Shape5 want = topology_[i];
    want[kBatch] = n;
    if (z_parts[i].shape() != want) {
      throw DimensionError("flow inverse: latent part " + std::to_string(i) + " has shape " +
                           z_parts[i].shape().str() + ", expected " + want.str());
    }
  }
  FlowInverseOutput out;
  Tensor5 h = z_parts.back();
  for (std::size_t l = levels_.size(); l-- > 0;) {
    if (l + 1 < levels_.size()) h = concat({h, z_parts[l]}, kChannel);
    for (auto it = levels_[l].rbegin(); it != levels_[l].rend(); ++it) {
      FlowLayerOutput r = (*it)->inverse(h);
      h = r.y;
      out.logdet = out.logdet.defined() ? add(out.logdet, r.logdet) : r.logdet;
    }
  }
  out.x = h;
  return out;
}

// ---- checkpoints ----

void save_flow(const std::filesystem::path& dir, const FlowStack& stack, Metadata meta) {
  const FlowConfig& c = stack.config();
  meta["flow.fingerprint"] = c.fingerprint();
  meta["flow.channels"] = std::to_string(c.channels);
  meta["flow.height"] = std::to_string(c.height);
  meta["flow.width"] = std::to_string(c.width);
  meta["flow.K"] = std::to_string(c.steps_per_level);
  meta["flow.L"] = std::to_string(c.levels);
  meta["flow.hidden"] = std::to_string(c.hidden);
  meta["flow.squeeze"] = c.squeeze ? "1" : "0";
  meta["flow.seed"] = std::to_string(c.seed);
  ParameterSet all;
  for (const auto& p : stack.parameters()) all.add(p.name, p.value);
  for (const auto& b : stack.buffers()) all.add("buffer." + b.name, b.value);
  save_checkpoint(dir, all, meta);
}

FlowStack load_flow(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw ConfigError("flow checkpoint " + dir.string() + " lacks " + key);
    return it->second;
  };
  FlowConfig c;
  c.channels = std::stoll(field("flow.channels"));
  c.height = std::stoll(field("flow.height"));
  c.width = std::stoll(field("flow.width"));
  c.steps_per_level = std::stoi(field("flow.K"));
  c.levels = std::stoi(field("flow.L"));
  c.hidden = std::stoll(field("flow.hidden"));
  c.squeeze = field("flow.squeeze") == "1";
  c.seed = std::stoull(field("flow.seed"));
  FlowStack stack(c);
  stack.parameters().load_from(ck.params);
  ParameterSet buffers;
  for (const auto& b : stack.buffers()) buffers.add(b.name, ck.params.get("buffer." + b.name));
  stack.buffers().load_from(buffers);
  return stack;
}

// ---- training ----

FlowTrainResult train_flow(FlowStack& stack, const Tensor5& samples, const FlowTrainOptions& opts) {
  if (opts.batch_size < 1) throw ConfigError("train_flow: batch size must be positive");
  const auto n = static_cast<std::size_t>(samples.shape().n());
  if (n == 0) throw ConfigError("train_flow: empty dataset");
  const long per_epoch = static_cast<long>((n + static_cast<std::size_t>(opts.batch_size) - 1) /
                                           static_cast<std::size_t>(opts.batch_size));
  const long total = opts.max_steps > 0 ? opts.max_steps : per_epoch * std::max(1, opts.epochs);
  const CosineSchedule schedule{opts.lr, opts.lr_min, total};
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  ParameterSet& params = stack.parameters();
  params.set_requires_grad(true);
  Adam adam(params);
  FlowTrainResult result;
  std::vector<Tensor5> last_good = params.snapshot();
  double initial = 0.0;
  for (long step = 0; step < total; ++step) {
    const long in_epoch = step % per_epoch;
    if (in_epoch == 0) std::shuffle(order.begin(), order.end(), rng);
    const auto from = static_cast<std::size_t>(in_epoch) * static_cast<std::size_t>(opts.batch_size);
    const auto to = std::min(n, from + static_cast<std::size_t>(opts.batch_size));
    const Tensor5 batch = gather_samples(samples, order, from, to);
    if (!stack.initialized()) stack.initialize(batch);

    GradTape::current().clear();
    params.zero_grad();
    double value = 0.0;
    Tensor5 loss;
    try {
      FlowOutput out = stack.forward_nll(batch);
      loss = mean_all(out.nll);
      value = loss.item();
      if (!std::isfinite(value)) throw NumericError("flow NLL is not finite");
      if (step == 0) initial = value;
      if (value > initial + opts.divergence_factor * std::max(std::abs(initial), 1.0)) {
        throw NumericError("flow NLL diverged (" + std::to_string(value) + " from initial " +
                           std::to_string(initial) + ")");
      }
    } catch (const NumericError& e) {
      GradTape::current().clear();
      params.restore(last_good);
      params.zero_grad();
      params.set_requires_grad(false);
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                         "; parameters restored to last good values");
    }
    last_good = params.snapshot();
    backward(loss);
    adam.step(schedule.at(step));
    result.nll_curve.push_back(value);
    if (opts.on_step) opts.on_step(step, value);
  }
  result.steps = total;
  params.zero_grad();
  params.set_requires_grad(false);
  return result;
}

std::vector<double> evaluate_nll(const FlowStack& stack, const Tensor5& samples, std::int64_t chunk) {
  NoGradGuard guard;
  std::vector<double> out;
  const std::int64_t n = samples.shape().n();
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; s += chunk) {
    const std::int64_t count = std::min(chunk, n - s);
    FlowOutput r = stack.forward_nll(slice(samples, kBatch, s, count));
    for (double v : r.nll.data()) out.push_back(v);
  }
  return out;
}

}  // namespace itae
