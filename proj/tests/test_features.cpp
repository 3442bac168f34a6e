#include <numeric>
#include <algorithm>
#include <random>

#include "doctest.h"
#include "itae/data.hpp"
#include "itae/features.hpp"
#include "itae/itae_net.hpp"
#include "itae/ops.hpp"

using namespace itae;

TEST_CASE("pooling constant and single-channel features") {
  LatentFeatures lat;
  lat.x_static = Tensor5({1, 256, 4, 64, 64}, 0.7);
  lat.x_dynamic = Tensor5({1, 32, 16, 64, 64}, 0.0);
  for (std::int64_t t = 0; t < 16; ++t)
    for (std::int64_t i = 0; i < 64 * 64; ++i)
      lat.x_dynamic.mutable_data()[static_cast<std::size_t>(lat.x_dynamic.offset(0, 5, t, 0, 0) + i)] = 5.0;
  const PooledFeatures p = pool_features(lat);
  CHECK(p.static_maps.shape() == Shape5{4, 2, 1, 64, 64});
  CHECK(p.dynamic_maps.shape() == Shape5{16, 2, 1, 64, 64});
  for (double v : p.static_maps.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
  for (std::int64_t s = 0; s < 16; ++s) {
    CHECK(p.dynamic_maps.at(s, 0, 0, 3, 7) == 5.0);
    CHECK(p.dynamic_maps.at(s, 1, 0, 3, 7) == doctest::Approx(5.0 / 32));
  }
  LatentFeatures big;
  big.x_static = Tensor5({1, 256, 1, 2, 2}, 0.0);
  big.x_static.at(0, 17, 0, 1, 1) = 5.0;
  const PooledFeatures q = pool_features(big);
  CHECK(q.static_maps.at(0, 0, 0, 1, 1) == 5.0);
  CHECK(q.static_maps.at(0, 1, 0, 1, 1) == doctest::Approx(5.0 / 256).epsilon(1e-14));
  CHECK_FALSE(q.dynamic_maps.defined());
}

TEST_CASE("pooling is channel-permutation invariant and avg never exceeds max") {
  std::mt19937_64 rng(1);
  LatentFeatures lat;
  lat.x_static = Tensor5::randn({2, 9, 2, 4, 4}, rng);
  const PooledFeatures p = pool_features(lat);
  std::vector<std::int64_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Tensor5> parts;
  for (auto c : perm) parts.push_back(slice(lat.x_static, kChannel, c, 1));
  LatentFeatures shuffled;
  shuffled.x_static = concat(parts, kChannel);
  const PooledFeatures q = pool_features(shuffled);
  CHECK(p.static_maps.data().size() == q.static_maps.data().size());
  for (std::size_t i = 0; i < p.static_maps.data().size(); ++i) {
    CHECK(p.static_maps.data()[i] == doctest::Approx(q.static_maps.data()[i]).epsilon(1e-14));
  }
  for (std::int64_t s = 0; s < 4; ++s)
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) CHECK(p.static_maps.at(s, 1, 0, y, x) <= p.static_maps.at(s, 0, 0, y, x));
  // equality iff all channels agree
  LatentFeatures flat;
  flat.x_static = Tensor5({1, 3, 1, 1, 1}, 2.0);
  const PooledFeatures f = pool_features(flat);
  CHECK(f.static_maps.at(0, 0, 0, 0, 0) == f.static_maps.at(0, 1, 0, 0, 0));
}

TEST_CASE("area resize matches a nested-loop box average") {
  std::mt19937_64 rng(2);
  const Tensor5 x = Tensor5::uniform({1, 2, 3, 256, 256}, rng, 0, 1);
  const Tensor5 y = area_resize(x, 64, 64);
  CHECK(y.shape() == Shape5{1, 2, 3, 64, 64});
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t t = 0; t < 3; ++t)
      for (std::int64_t oy = 0; oy < 64; oy += 7)
        for (std::int64_t ox = 0; ox < 64; ox += 5) {
          double acc = 0;
          for (int dy = 0; dy < 4; ++dy)
            for (int dx = 0; dx < 4; ++dx) acc += x.at(0, c, t, oy * 4 + dy, ox * 4 + dx);
          CHECK(y.at(0, c, t, oy, ox) == doctest::Approx(acc / 16).epsilon(1e-12));
        }
  // non-integer ratio keeps the mean
  const Tensor5 z = area_resize(x, 48, 40);
  CHECK(mean_all(z).item() == doctest::Approx(mean_all(x).item()).epsilon(1e-10));
}

TEST_CASE("intensity channel uses the frame the static path saw") {
  Tensor5 frames({1, 3, 8, 16, 16}, 0.0);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t x = 0; x < 16; ++x) {
        frames.at(0, c, 0, y, x) = 1.0;            // white frame 0
        frames.at(0, c, 4, y, x) = 0.1 * (c + 1);  // frame 4: gray 0.2
        frames.at(0, c, 5, y, x) = 0.9;            // never sampled
      }
  const Tensor5 maps({2, 2, 1, 4, 4}, 0.5);
  const Tensor5 out = append_intensity(maps, frames, 4);
  CHECK(out.shape() == Shape5{2, 3, 1, 4, 4});
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) {
      CHECK(out.at(0, 2, 0, y, x) == doctest::Approx(1.0));
      CHECK(out.at(1, 2, 0, y, x) == doctest::Approx(0.2));
      CHECK(out.at(1, 0, 0, y, x) == 0.5);
    }
  // grayscale clip: intensity is the resized frame itself
  std::mt19937_64 rng(3);
  const Tensor5 gray = Tensor5::uniform({1, 1, 4, 16, 16}, rng, 0, 1);
  const Tensor5 g = append_intensity(Tensor5({1, 2, 1, 4, 4}, 0.0), gray, 4);
  const Tensor5 ref = area_resize(slice(gray, kTime, 0, 1), 4, 4);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) CHECK(g.at(0, 2, 0, y, x) == doctest::Approx(ref.at(0, 0, 0, y, x)));
}

TEST_CASE("flow inputs from a frozen model are deterministic with the expected shapes") {
  ItaeConfig cfg;
  cfg.in_channels = 1;
  cfg.clip_length = 8;
  cfg.height = cfg.width = 32;
  cfg.width_scale = 0.25;
  const ItaeModel model(cfg);
  std::mt19937_64 rng(4);
  const Tensor5 frames = Tensor5::uniform({2, 1, 8, 32, 32}, rng, 0, 1);
  const FlowInput a = make_flow_input(model, frames);
  const FlowInput b = make_flow_input(model, frames);
  CHECK(a.static_in.shape() == Shape5{4, 3, 1, 8, 8});
  CHECK(a.dynamic_in.shape() == Shape5{16, 2, 1, 8, 8});
  CHECK(std::equal(a.static_in.data().begin(), a.static_in.data().end(), b.static_in.data().begin()));
  CHECK(std::equal(a.dynamic_in.data().begin(), a.dynamic_in.data().end(), b.dynamic_in.data().begin()));
  CHECK_FALSE(a.static_in.requires_grad());
}
