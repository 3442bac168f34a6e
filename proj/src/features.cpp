#include "itae/features.hpp"

#include <algorithm>

#include "itae/data.hpp"
#include "itae/errors.hpp"
#include "itae/ops.hpp"

namespace itae {

namespace {

// (N, C, T, h, w) -> (N*T, 2, 1, h, w)
Tensor5 channel_pool(const Tensor5& x) {
  const Shape5& s = x.shape();
  const std::int64_t plane = s.h() * s.w();
  std::vector<double> out(static_cast<std::size_t>(s.n() * s.t() * 2 * plane));
  auto d = x.data();
  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t t = 0; t < s.t(); ++t) {
      double* mx = out.data() + ((n * s.t() + t) * 2) * plane;
      double* av = mx + plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        double m = d[static_cast<std::size_t>(x.offset(n, 0, t, 0, 0) + i)];
        double acc = 0.0;
        for (std::int64_t c = 0; c < s.c(); ++c) {
          const double v = d[static_cast<std::size_t>(x.offset(n, c, t, 0, 0) + i)];
          m = std::max(m, v);
          acc += v;
        }
        mx[i] = m;
        av[i] = acc / static_cast<double>(s.c());
      }
    }
  }
  return Tensor5({s.n() * s.t(), 2, 1, s.h(), s.w()}, std::move(out));
}

}  // namespace

PooledFeatures pool_features(const LatentFeatures& latent) {
  if (!latent.x_static.defined()) throw ContractError("pool_features: missing static features");
  PooledFeatures p;
  p.static_maps = channel_pool(latent.x_static);
  if (latent.x_dynamic.defined()) {
    if (latent.x_dynamic.shape().n() != latent.x_static.shape().n()) {
      throw DimensionError("pool_features: batch mismatch " + latent.x_static.shape().str() + " vs " +
                           latent.x_dynamic.shape().str());
    }
    p.dynamic_maps = channel_pool(latent.x_dynamic);
  }
  return p;
}

Tensor5 append_intensity(const Tensor5& static_maps, const Tensor5& frames, int tau) {
  const Shape5& f = frames.shape();
  const Shape5& m = static_maps.shape();
  if (tau < 1 || f.t() % tau != 0 || m.n() != f.n() * (f.t() / tau) || m.t() != 1) {
    throw DimensionError("append_intensity: maps " + m.str() + " do not match frames " + f.str() +
                         " at tau " + std::to_string(tau));
  }
  const std::int64_t slices = f.t() / tau;
  NoGradGuard guard;
  // gray frames at t*tau: (N, 1, T/tau, H, W) -> (N*T/tau, 1, 1, h, w)
  Tensor5 gray = mean(slice(frames, kTime, 0, slices, tau), {kChannel});
  gray = area_resize(gray, m.h(), m.w());
  gray = reshape(gray, {m.n(), 1, 1, m.h(), m.w()});
  return concat({static_maps.detach(), gray}, kChannel);
}

FlowInput make_flow_input(const ItaeModel& model, const Tensor5& frames) {
  NoGradGuard guard;
  const PooledFeatures p = pool_features(encode(model, frames));
  FlowInput in;
  in.static_in = append_intensity(p.static_maps, frames, model.config().tau);
  in.dynamic_in = p.dynamic_maps;
  return in;
}

}  // namespace itae
