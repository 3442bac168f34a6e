#pragma once

#include <initializer_list>
#include <vector>

#include "itae/tensor.hpp"

namespace itae {

// Binary ops require equal shapes, except that either side may have batch 1
// and is then broadcast over the other side's batch.
Tensor5 add(const Tensor5& a, const Tensor5& b);
Tensor5 sub(const Tensor5& a, const Tensor5& b);
Tensor5 mul(const Tensor5& a, const Tensor5& b);
Tensor5 div(const Tensor5& a, const Tensor5& b);

inline Tensor5 operator+(const Tensor5& a, const Tensor5& b) { return add(a, b); }
inline Tensor5 operator-(const Tensor5& a, const Tensor5& b) { return sub(a, b); }
inline Tensor5 operator*(const Tensor5& a, const Tensor5& b) { return mul(a, b); }
inline Tensor5 operator/(const Tensor5& a, const Tensor5& b) { return div(a, b); }

Tensor5 scale(const Tensor5& x, double factor);
Tensor5 add_scalar(const Tensor5& x, double value);
Tensor5 neg(const Tensor5& x);
Tensor5 exp(const Tensor5& x);
Tensor5 log(const Tensor5& x);
Tensor5 tanh(const Tensor5& x);
Tensor5 sigmoid(const Tensor5& x);
Tensor5 relu(const Tensor5& x);
Tensor5 leaky_relu(const Tensor5& x, double slope);
Tensor5 abs(const Tensor5& x);
Tensor5 square(const Tensor5& x);
Tensor5 pow_scalar(const Tensor5& x, double exponent);  // x > 0 required
Tensor5 clamp_min(const Tensor5& x, double lo);

// y[n,c,...] = x[n,c,...] * scale[c] + bias[c]; scale/bias have shape (1,C,1,1,1).
// Either may be undefined (treated as 1 / 0).
Tensor5 channel_affine(const Tensor5& x, const Tensor5& scale, const Tensor5& bias);
inline Tensor5 bias_add(const Tensor5& x, const Tensor5& bias) {
  return channel_affine(x, Tensor5(), bias);
}

// Reductions keep rank: reduced axes become size 1.
Tensor5 sum(const Tensor5& x, std::initializer_list<int> axes);
Tensor5 mean(const Tensor5& x, std::initializer_list<int> axes);
// Gradient goes to the lowest flat index among tied maxima.
Tensor5 max(const Tensor5& x, std::initializer_list<int> axes);
Tensor5 sum_all(const Tensor5& x);
Tensor5 mean_all(const Tensor5& x);

// Copying slice [start, start + count*step) with stride `step` along `axis`.
Tensor5 slice(const Tensor5& x, int axis, std::int64_t start, std::int64_t count,
              std::int64_t step = 1);
Tensor5 concat(const std::vector<Tensor5>& parts, int axis);
Tensor5 reshape(const Tensor5& x, const Shape5& shape);

// (N,C,T,H,W) -> (N,4C,T,H/2,W/2); output channel c*4 + dy*2 + dx.
Tensor5 space_to_channel(const Tensor5& x);
Tensor5 channel_to_space(const Tensor5& x);

// Sum of a*b over all elements; no gradient tracking. Handy for adjoint checks.
double dot(const Tensor5& a, const Tensor5& b);

}  // namespace itae
