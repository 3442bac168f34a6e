#pragma once

#include <array>
#include <cstdint>

#include "itae/tensor.hpp"

namespace itae {

using Triple = std::array<std::int64_t, 3>;  // (time, height, width)

// floor((D + 2p - k) / s) + 1
std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                          std::int64_t pad);
// (D - 1) s - 2p + k + output_padding
std::int64_t conv_transpose_out_dim(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                    std::int64_t pad, std::int64_t output_padding);

// Output shape of conv3d; throws DimensionError naming both shapes on mismatch.
Shape5 conv3d_shape(const Shape5& input, const Shape5& weight, const Triple& stride,
                    const Triple& padding);
Shape5 conv_transpose3d_shape(const Shape5& input, const Shape5& weight, const Triple& stride,
                              const Triple& padding, const Triple& output_padding);

// weight: (out_ch, in_ch, kt, kh, kw); zero padding.
Tensor5 conv3d(const Tensor5& input, const Tensor5& weight, const Triple& stride,
               const Triple& padding);

// Adjoint of conv3d with respect to its input. The weight uses conv3d's layout,
// so here it is (in_ch, out_ch, kt, kh, kw) from the transposed op's perspective.
Tensor5 conv_transpose3d(const Tensor5& input, const Tensor5& weight, const Triple& stride,
                         const Triple& padding, const Triple& output_padding = {0, 0, 0});

}  // namespace itae
