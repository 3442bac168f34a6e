#include "doctest.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "flow_helpers.hpp"
#include "gradcheck.hpp"
#include "itae/errors.hpp"
#include "itae/flow.hpp"
#include "itae/ops.hpp"

using namespace itae;
using itae::testing::flatten;
using itae::testing::max_abs_diff;
using itae::testing::numeric_logdet;
using itae::testing::randomize;

namespace {

template <typename Layer>
void randomize_layer(Layer& layer, std::mt19937_64& rng) {
  ParameterSet p, b;
  layer.collect(p, b, "");
  randomize(p, rng);
}

void check_layer(const FlowLayer& layer, const Tensor5& x) {
  const FlowLayerOutput fwd = layer.forward(x);
  const FlowLayerOutput inv = layer.inverse(fwd.y);
  CHECK(max_abs_diff(inv.y, x) < 1e-6);
  CHECK(std::abs(fwd.logdet.item() + inv.logdet.item()) < 1e-8);
  const double numeric =
      numeric_logdet([&](const Tensor5& v) { return flatten({layer.forward(v).y}); }, x);
  CHECK(std::abs(numeric - fwd.logdet.item()) < 1e-6);
}

FlowConfig small_config(std::int64_t c, std::int64_t h, std::int64_t w, int k, int l, bool squeeze) {
  FlowConfig cfg;
  cfg.channels = c;
  cfg.height = h;
  cfg.width = w;
  cfg.steps_per_level = k;
  cfg.levels = l;
  cfg.hidden = 8;
  cfg.squeeze = squeeze;
  return cfg;
}

// Perturbation sized so that a K=4 stack stays in the well-conditioned regime;
// larger values saturate the tanh scales and push activations past 1e5.
void check_stack(FlowStack& stack, std::mt19937_64& rng, bool jacobian) {
  randomize(stack.parameters(), rng, 0.08);
  const FlowConfig& c = stack.config();
  const Tensor5 x = Tensor5::randn({1, c.channels, 1, c.height, c.width}, rng);
  const FlowOutput out = stack.forward_nll(x);
  const FlowInverseOutput inv = stack.inverse(out.z_parts);
  CHECK(max_abs_diff(inv.x, x) < 1e-6);
  CHECK(std::abs(out.logdet.item() + inv.logdet.item()) < 1e-8);
  // latents of the reconstruction match the originals
  const FlowOutput again = stack.forward_nll(inv.x);
  for (std::size_t i = 0; i < out.z_parts.size(); ++i) {
    CHECK(max_abs_diff(again.z_parts[i], out.z_parts[i]) < 1e-6);
  }
  if (jacobian) {
    const double numeric = numeric_logdet(
        [&](const Tensor5& v) { return flatten(stack.forward_nll(v).z_parts); }, x);
    CHECK(std::abs(numeric - out.logdet.item()) < 1e-6);
  }
}

}  // namespace

TEST_CASE("every flow layer inverts and its logdet matches the numeric Jacobian") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor5 x = Tensor5::randn({1, 2, 1, 2, 2}, rng);
    ActNorm an(2);
    randomize_layer(an, rng);
    check_layer(an, x);
    InvConv1x1 inv(2, seed);
    randomize_layer(inv, rng);
    check_layer(inv, x);
    AffineCoupling cp(2, 6, seed);
    randomize_layer(cp, rng);
    check_layer(cp, x);
    check_layer(Squeeze{}, x);
    // odd channel split and wider 1x1 conv
    const Tensor5 x3 = Tensor5::randn({1, 3, 1, 1, 2}, rng);
    AffineCoupling cp3(3, 5, seed + 10);
    randomize_layer(cp3, rng);
    check_layer(cp3, x3);
    InvConv1x1 inv4(4, seed + 10);
    randomize_layer(inv4, rng);
    check_layer(inv4, Tensor5::randn({1, 4, 1, 1, 2}, rng));
  }
}

TEST_CASE("composed stacks invert and match the numeric Jacobian") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    std::mt19937_64 rng(100 + seed);
    FlowStack split_stack(small_config(8, 1, 1, 4, 2, false));
    check_stack(split_stack, rng, true);
    FlowStack squeezed(small_config(2, 2, 2, 4, 1, true));
    check_stack(squeezed, rng, true);
    FlowStack multiscale(small_config(2, 4, 4, 4, 2, true));
    check_stack(multiscale, rng, true);  // 32 dims
    FlowStack big(small_config(2, 16, 16, 4, 2, true));
    check_stack(big, rng, false);
  }
}

TEST_CASE("single actnorm with scale 2 has logdet hw * C * ln 2") {
  ActNorm an(2);
  for (double& v : an.logs().mutable_data()) v = std::numbers::ln2;
  std::mt19937_64 rng(3);
  const Tensor5 x = Tensor5::randn({1, 2, 1, 2, 2}, rng);
  const double expected = 2 * 2 * 2 * std::numbers::ln2;
  CHECK(an.forward(x).logdet.item() == doctest::Approx(expected).epsilon(1e-12));
  const double numeric = numeric_logdet([&](const Tensor5& v) { return flatten({an.forward(v).y}); }, x);
  CHECK(numeric == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("nll equals prior plus the independently reported per-layer logdets") {
  std::mt19937_64 rng(9);
  FlowStack stack(small_config(2, 4, 4, 3, 2, true));
  randomize(stack.parameters(), rng);
  const Tensor5 x = Tensor5::randn({3, 2, 1, 4, 4}, rng);
  const FlowOutput out = stack.forward_nll(x);
  CHECK(out.layer_logdets.size() == stack.layer_count());

  // replay the layers one by one
  Tensor5 h = x;
  std::vector<Tensor5> parts;
  std::vector<double> layer_sum(3, 0.0);
  std::size_t li = 0;
  const FlowConfig& c = stack.config();
  const std::size_t per_level = stack.layer_count() / static_cast<std::size_t>(c.levels);
  for (int l = 0; l < c.levels; ++l) {
    for (std::size_t k = 0; k < per_level; ++k, ++li) {
      const FlowLayerOutput r = stack.layer(static_cast<std::size_t>(l), k).forward(h);
      h = r.y;
      for (int n = 0; n < 3; ++n) {
        CHECK(r.logdet.data()[static_cast<std::size_t>(n)] ==
              out.layer_logdets[li].data()[static_cast<std::size_t>(n)]);
        layer_sum[static_cast<std::size_t>(n)] += r.logdet.data()[static_cast<std::size_t>(n)];
      }
    }
    if (l + 1 < c.levels) {
      parts.push_back(slice(h, kChannel, h.shape().c() / 2, h.shape().c() - h.shape().c() / 2));
      h = slice(h, kChannel, 0, h.shape().c() / 2);
    }
  }
  parts.push_back(h);
  for (int n = 0; n < 3; ++n) {
    double prior = 0.0;
    for (const auto& z : parts) {
      const Tensor5 zn = slice(z, kBatch, n, 1);
      prior += -0.5 * dot(zn, zn) - 0.5 * static_cast<double>(zn.numel()) * std::log(2 * std::numbers::pi);
    }
    const double nll = out.nll.data()[static_cast<std::size_t>(n)];
    CHECK(nll == doctest::Approx(-(prior + layer_sum[static_cast<std::size_t>(n)])).epsilon(1e-12));
  }
}

TEST_CASE("fresh stack is a rotation: nll at zero is d/2 ln 2pi") {
  FlowStack stack(small_config(2, 8, 8, 4, 2, true));
  const double d = 2 * 8 * 8;
  const FlowOutput zero = stack.forward_nll(Tensor5::zeros({1, 2, 1, 8, 8}));
  CHECK(zero.nll.item() == doctest::Approx(0.5 * d * std::log(2 * std::numbers::pi)).epsilon(1e-10));
  CHECK(std::abs(zero.logdet.item()) < 1e-9);
  CHECK(zero.bits_per_dim() == doctest::Approx(zero.nll.item() / (d * std::numbers::ln2)));
  std::mt19937_64 rng(4);
  const Tensor5 x = Tensor5::randn({1, 2, 1, 8, 8}, rng);
  CHECK(stack.forward_nll(x).nll.item() ==
        doctest::Approx(0.5 * dot(x, x) + 0.5 * d * std::log(2 * std::numbers::pi)).epsilon(1e-10));
  // z = 0 through the identity stack gives x = 0
  std::vector<Tensor5> zeros;
  for (const auto& s : stack.topology()) zeros.push_back(Tensor5::zeros(s));
  CHECK(max_abs_diff(stack.inverse(zeros).x, Tensor5::zeros({1, 2, 1, 8, 8})) < 1e-12);
}

TEST_CASE("actnorm data init gives zero mean and unit variance") {
  std::mt19937_64 rng(5);
  Tensor5 x = Tensor5::randn({16, 3, 1, 4, 4}, rng, 2.5);
  for (double& v : x.mutable_data()) v += 1.7;
  ActNorm an(3);
  an.initialize(x);
  CHECK(an.initialized());
  const Tensor5 y = an.forward(x).y;
  const Tensor5 mu = mean(y, {kBatch, kTime, kHeight, kWidth});
  const Tensor5 sq = mean(square(y), {kBatch, kTime, kHeight, kWidth});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(mu.data()[c]) < 1e-3);
    CHECK(std::abs(sq.data()[c] - mu.data()[c] * mu.data()[c] - 1.0) < 1e-3);
  }
}

TEST_CASE("flow topology and configuration errors") {
  CHECK_THROWS_AS(FlowStack(small_config(2, 6, 6, 2, 2, true)), ConfigError);  // 6 -> 3 -> odd
  CHECK_THROWS_AS(FlowStack(small_config(1, 1, 1, 2, 1, false)), ConfigError);
  FlowStack stack(small_config(2, 4, 4, 2, 2, true));
  CHECK_THROWS_AS(stack.forward_nll(Tensor5::zeros({1, 3, 1, 4, 4})), DimensionError);
  CHECK_THROWS_AS(stack.inverse({Tensor5::zeros({1, 4, 1, 2, 2})}), DimensionError);
  try {
    stack.inverse({Tensor5::zeros({1, 4, 1, 2, 2}), Tensor5::zeros({1, 3, 1, 1, 1})});
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("expected") != std::string::npos);
  }
  InvConv1x1 inv(2, 1);
  inv.log_s().mutable_data()[0] = -1e6;  // exp underflows to a singular diagonal
  CHECK_THROWS_AS(inv.forward(Tensor5::zeros({1, 2, 1, 1, 1})), NumericError);
}

TEST_CASE("flow nll gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    FlowStack stack(small_config(2, 2, 2, 2, 1, true));
    randomize(stack.parameters(), rng, 0.2);
    Tensor5 x = Tensor5::randn({2, 2, 1, 2, 2}, rng);
    x.set_requires_grad(true);
    std::vector<Tensor5> leaves{x};
    for (auto& p : stack.parameters()) leaves.push_back(p.value);
    for (auto& l : leaves) l.set_requires_grad(true);
    const auto rep = itae::testing::gradcheck(
        [&] { return mean_all(stack.forward_nll(x).nll); }, leaves);
    CHECK(rep.max_rel_error < 1e-4);
    for (auto& l : leaves) l.set_requires_grad(false);
  }
}

TEST_CASE("flow checkpoints round-trip") {
  std::mt19937_64 rng(6);
  FlowStack stack(small_config(2, 4, 4, 2, 2, true));
  stack.initialize(Tensor5::randn({4, 2, 1, 4, 4}, rng));
  randomize(stack.parameters(), rng);
  const auto dir = std::filesystem::temp_directory_path() / "itae_flow_ckpt_test";
  std::filesystem::remove_all(dir);
  save_flow(dir, stack, {{"role", "static"}});
  const FlowStack back = load_flow(dir);
  CHECK(back.initialized());
  const Tensor5 x = Tensor5::randn({2, 2, 1, 4, 4}, rng);
  CHECK(max_abs_diff(back.forward_nll(x).nll, stack.forward_nll(x).nll) == 0.0);
  CHECK(load_checkpoint(dir).meta.at("role") == "static");
  std::filesystem::remove_all(dir);
}

TEST_CASE("desk flow trains on 2-channel 16x16 maps within a minute") {
  std::mt19937_64 rng(7);
  FlowConfig cfg = small_config(2, 16, 16, 4, 2, true);
  cfg.hidden = 64;
  FlowStack stack(cfg);
  // smooth correlated maps
  Tensor5 data = Tensor5::randn({64, 2, 1, 16, 16}, rng, 0.3);
  {
    auto d = data.mutable_data();
    for (std::int64_t n = 0; n < 64; ++n) {
      const double base = std::normal_distribution<double>(0.0, 1.0)(rng);
      for (std::int64_t i = 0; i < 512; ++i) d[static_cast<std::size_t>(n * 512 + i)] += base;
    }
  }
  FlowTrainOptions opts;
  opts.lr = 1e-3;
  opts.batch_size = 8;
  opts.epochs = 3;
  const auto t0 = std::chrono::steady_clock::now();
  const FlowTrainResult r = train_flow(stack, data, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("desk flow: " << r.steps << " steps in " << secs << " s, nll " << r.nll_curve.front()
                        << " -> " << r.nll_curve.back());
  CHECK(secs < 60.0);
  CHECK(r.nll_curve.back() < r.nll_curve.front());
  CHECK_FALSE(stack.parameters().begin()->value.requires_grad());
}

TEST_CASE("2-D flow conserves probability mass and approaches the mixture entropy") {
  itae::testing::Mixture2d mix{{{-1.0, -0.5}, {1.0, 0.5}, {0.0, 1.2}}, 0.6};
  std::mt19937_64 rng(8);
  const Tensor5 train = mix.sample(2048, rng);
  FlowConfig cfg = small_config(2, 1, 1, 6, 1, false);
  cfg.hidden = 32;
  FlowStack stack(cfg);
  const double before = itae::testing::density_mass(stack);
  CHECK(before == doctest::Approx(1.0).epsilon(0.02));

  FlowTrainOptions opts;
  opts.lr = 5e-3;
  opts.lr_min = 1e-4;
  opts.batch_size = 128;
  opts.epochs = 40;
  const FlowTrainResult r = train_flow(stack, train, opts);
  const double after = itae::testing::density_mass(stack);
  CHECK(after == doctest::Approx(1.0).epsilon(0.02));

  const Tensor5 held = mix.sample(4096, rng);
  const auto nll = evaluate_nll(stack, held);
  double mean_nll = 0.0;
  for (double v : nll) mean_nll += v / static_cast<double>(nll.size());
  const double bpd = mean_nll / (2 * std::numbers::ln2);
  const double entropy_bpd = mix.entropy() / (2 * std::numbers::ln2);
  MESSAGE("mass before " << before << " after " << after << "; bpd " << bpd << " vs entropy "
                         << entropy_bpd << " (" << r.steps << " steps)");
  CHECK(std::abs(bpd - entropy_bpd) < 0.2);

  // out-of-distribution samples score above the in-distribution mean
  int above = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::normal_distribution<double> far(0.0, 1.0);
    const double angle = 2 * std::numbers::pi * trial / 50.0;
    const Tensor5 ood({1, 2, 1, 1, 1}, {4.0 * std::cos(angle) + 0.2 * far(rng),
                                        4.0 * std::sin(angle) + 0.2 * far(rng)});
    if (evaluate_nll(stack, ood)[0] > mean_nll) ++above;
  }
  CHECK(above >= 45);
}

TEST_CASE("flow training aborts on divergence and restores parameters") {
  std::mt19937_64 rng(10);
  FlowStack stack(small_config(2, 1, 1, 2, 1, false));
  const Tensor5 data = Tensor5::randn({32, 2, 1, 1, 1}, rng);
  FlowTrainOptions opts;
  opts.lr = 1e6;  // absurd step size
  opts.batch_size = 8;
  opts.epochs = 20;
  CHECK_THROWS_AS(train_flow(stack, data, opts), NumericError);
  for (const auto& p : stack.parameters()) CHECK(p.value.all_finite());
  CHECK_FALSE(stack.parameters().begin()->value.requires_grad());
}
