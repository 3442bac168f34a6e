#pragma once

#include "itae/itae_net.hpp"
#include "itae/tensor.hpp"

namespace itae {

// Each temporal slice of each clip becomes one flow sample, shape (S, C, 1, h, w)
// with sample index n * slices + t.
struct PooledFeatures {
  Tensor5 static_maps;   // (N*T/tau, 2, 1, H/4, W/4): channel max, channel mean
  Tensor5 dynamic_maps;  // (N*T, 2, 1, H/4, W/4); undefined without a dynamic path
};

PooledFeatures pool_features(const LatentFeatures& latent);

// Appends the channel-mean intensity of frame t*tau, area-resampled to the map
// size, as a third channel. frames: (N, C, T, H, W).
Tensor5 append_intensity(const Tensor5& static_maps, const Tensor5& frames, int tau);

struct FlowInput {
  Tensor5 static_in;   // (N*T/tau, 3, 1, H/4, W/4)
  Tensor5 dynamic_in;  // (N*T, 2, 1, H/4, W/4)
};

// Runs the frozen encoder without recording gradients.
FlowInput make_flow_input(const ItaeModel& model, const Tensor5& frames);

}  // namespace itae
