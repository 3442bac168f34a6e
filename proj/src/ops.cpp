#include "itae/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "itae/errors.hpp"

namespace itae {

using detail::make_result;
using detail::TensorImpl;

namespace {

Shape5 broadcast_shape(const Shape5& a, const Shape5& b, const char* op) {
  if (a == b) return a;
  bool tail_equal = true;
  for (int i = 1; i < 5; ++i) tail_equal = tail_equal && a[i] == b[i];
  if (tail_equal && (a.n() == 1 || b.n() == 1)) {
    Shape5 out = a;
    out[kBatch] = std::max(a.n(), b.n());
    return out;
  }
  throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Flat index into an operand that may be batch-broadcast.
inline std::size_t bidx(std::size_t i, std::size_t operand_numel, std::size_t out_numel) {
  return operand_numel == out_numel ? i : i % operand_numel;
}

template <typename Fwd, typename Bwd>
Tensor5 binary_op(const Tensor5& a, const Tensor5& b, const char* name, Fwd fwd, Bwd bwd) {
  const Shape5 shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = static_cast<std::size_t>(shape.numel());
  const std::size_t na = static_cast<std::size_t>(a.numel());
  const std::size_t nb = static_cast<std::size_t>(b.numel());
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[bidx(i, na, n)], bd[bidx(i, nb, n)]);
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return make_result(shape, std::move(out), {a, b}, [=](TensorImpl* o) {
    return [=]() {
      const auto& g = o->grad;
      const auto& av = ai->data;
      const auto& bv = bi->data;
      double* ga = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
      double* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = bidx(i, na, n);
        const std::size_t ib = bidx(i, nb, n);
        double da = 0.0, db = 0.0;
        bwd(av[ia], bv[ib], o->data[i], da, db);
        if (ga) ga[ia] += g[i] * da;
        if (gb) gb[ib] += g[i] * db;
      }
    };
  });
}

// `deriv(x, y)` returns dy/dx given input x and output y.
template <typename Fwd, typename Deriv>
Tensor5 unary_op(const Tensor5& x, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      const auto& g = o->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->data[i], o->data[i]);
    };
  });
}

struct ReducePlan {
  Shape5 out_shape;
  std::array<std::int64_t, 5> out_strides{};  // 0 along reduced axes
};

ReducePlan plan_reduce(const Shape5& in, std::initializer_list<int> axes) {
  ReducePlan p;
  p.out_shape = in;
  std::array<bool, 5> reduced{};
  for (int a : axes) {
    if (a < 0 || a > 4) throw DimensionError("reduction axis out of range: " + std::to_string(a));
    reduced[static_cast<std::size_t>(a)] = true;
    p.out_shape[a] = 1;
  }
  std::int64_t stride = 1;
  for (int a = 4; a >= 0; --a) {
    p.out_strides[static_cast<std::size_t>(a)] = reduced[static_cast<std::size_t>(a)] ? 0 : stride;
    stride *= p.out_shape[a];
  }
  return p;
}

// Calls f(in_flat, out_flat) for every input element in row-major order.
template <typename F>
void for_each_reduce(const Shape5& in, const ReducePlan& p, F&& f) {
  std::int64_t i = 0;
  const auto& s = p.out_strides;
  for (std::int64_t n = 0; n < in.n(); ++n)
    for (std::int64_t c = 0; c < in.c(); ++c)
      for (std::int64_t t = 0; t < in.t(); ++t)
        for (std::int64_t h = 0; h < in.h(); ++h) {
          const std::int64_t base = n * s[0] + c * s[1] + t * s[2] + h * s[3];
          for (std::int64_t w = 0; w < in.w(); ++w, ++i) f(i, base + w * s[4]);
        }
}

std::int64_t outer_size(const Shape5& s, int axis) {
  std::int64_t r = 1;
  for (int a = 0; a < axis; ++a) r *= s[a];
  return r;
}

std::int64_t inner_size(const Shape5& s, int axis) {
  std::int64_t r = 1;
  for (int a = axis + 1; a < 5; ++a) r *= s[a];
  return r;
}

}  // namespace

Tensor5 add(const Tensor5& a, const Tensor5& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

Tensor5 sub(const Tensor5& a, const Tensor5& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

Tensor5 mul(const Tensor5& a, const Tensor5& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double, double& da, double& db) { da = y; db = x; });
}

Tensor5 div(const Tensor5& a, const Tensor5& b) {
  auto r = binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double out, double& da, double& db) {
        da = 1.0 / y;
        db = -out / y;
      });
  r.check_finite("div");
  return r;
}

Tensor5 scale(const Tensor5& x, double factor) {
  return unary_op(x, [=](double v) { return v * factor; }, [=](double, double) { return factor; });
}

Tensor5 add_scalar(const Tensor5& x, double value) {
  return unary_op(x, [=](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor5 neg(const Tensor5& x) { return scale(x, -1.0); }

Tensor5 exp(const Tensor5& x) {
  auto r = unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
  r.check_finite("exp");
  return r;
}

Tensor5 log(const Tensor5& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive argument");
  }
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor5 tanh(const Tensor5& x) {
  return unary_op(x, [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor5 sigmoid(const Tensor5& x) {
  return unary_op(
      x,
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor5 relu(const Tensor5& x) {
  return unary_op(x, [](double v) { return v > 0 ? v : 0.0; },
                  [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor5 leaky_relu(const Tensor5& x, double slope) {
  return unary_op(x, [=](double v) { return v > 0 ? v : slope * v; },
                  [=](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor5 abs(const Tensor5& x) {
  return unary_op(x, [](double v) { return std::abs(v); },
                  [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor5 square(const Tensor5& x) {
  return unary_op(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor5 pow_scalar(const Tensor5& x, double exponent) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("pow_scalar: non-positive base");
  }
  return unary_op(x, [=](double v) { return std::pow(v, exponent); },
                  [=](double v, double y) { return exponent * y / v; });
}

Tensor5 clamp_min(const Tensor5& x, double lo) {
  return unary_op(x, [=](double v) { return v > lo ? v : lo; },
                  [=](double v, double) { return v > lo ? 1.0 : 0.0; });
}

Tensor5 channel_affine(const Tensor5& x, const Tensor5& scale_c, const Tensor5& bias_c) {
  const Shape5& s = x.shape();
  const Shape5 param_shape{1, s.c(), 1, 1, 1};
  if (scale_c.defined() && scale_c.shape() != param_shape) {
    throw DimensionError("channel_affine: scale shape " + scale_c.shape().str() +
                         " does not fit input " + s.str());
  }
  if (bias_c.defined() && bias_c.shape() != param_shape) {
    throw DimensionError("channel_affine: bias shape " + bias_c.shape().str() +
                         " does not fit input " + s.str());
  }
  const std::int64_t inner = s.spatial_size();
  const std::int64_t channels = s.c();
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const double k = scale_c.defined() ? scale_c.data()[static_cast<std::size_t>(c)] : 1.0;
      const double b = bias_c.defined() ? bias_c.data()[static_cast<std::size_t>(c)] : 0.0;
      const std::int64_t base = (n * channels + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        out[static_cast<std::size_t>(base + i)] = xd[static_cast<std::size_t>(base + i)] * k + b;
      }
    }
  }
  std::vector<Tensor5> parents{x};
  if (scale_c.defined()) parents.push_back(scale_c);
  if (bias_c.defined()) parents.push_back(bias_c);
  TensorImpl* xi = x.impl();
  TensorImpl* si = scale_c.defined() ? scale_c.impl() : nullptr;
  TensorImpl* bi = bias_c.defined() ? bias_c.impl() : nullptr;
  const std::int64_t batch = s.n();
  return make_result(s, std::move(out), std::move(parents), [=](TensorImpl* o) {
    return [=]() {
      const auto& g = o->grad;
      double* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
      double* gs = (si && si->requires_grad) ? si->ensure_grad().data() : nullptr;
      double* gb = (bi && bi->requires_grad) ? bi->ensure_grad().data() : nullptr;
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t c = 0; c < channels; ++c) {
          const double k = si ? si->data[static_cast<std::size_t>(c)] : 1.0;
          const std::int64_t base = (n * channels + c) * inner;
          double acc_s = 0.0, acc_b = 0.0;
          for (std::int64_t i = 0; i < inner; ++i) {
            const auto idx = static_cast<std::size_t>(base + i);
            if (gx) gx[idx] += g[idx] * k;
            acc_s += g[idx] * xi->data[idx];
            acc_b += g[idx];
          }
          if (gs) gs[c] += acc_s;
          if (gb) gb[c] += acc_b;
        }
      }
    };
  });
}

Tensor5 sum(const Tensor5& x, std::initializer_list<int> axes) {
  const ReducePlan plan = plan_reduce(x.shape(), axes);
  auto xd = x.data();
  std::vector<double> out(static_cast<std::size_t>(plan.out_shape.numel()), 0.0);
  for_each_reduce(x.shape(), plan, [&](std::int64_t i, std::int64_t o) {
    out[static_cast<std::size_t>(o)] += xd[static_cast<std::size_t>(i)];
  });
  TensorImpl* xi = x.impl();
  const Shape5 in_shape = x.shape();
  return make_result(plan.out_shape, std::move(out), {x}, [=](TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for_each_reduce(in_shape, plan, [&](std::int64_t i, std::int64_t oi) {
        gx[static_cast<std::size_t>(i)] += o->grad[static_cast<std::size_t>(oi)];
      });
    };
  });
}

Tensor5 mean(const Tensor5& x, std::initializer_list<int> axes) {
  const ReducePlan plan = plan_reduce(x.shape(), axes);
  const double count =
      static_cast<double>(x.shape().numel()) / static_cast<double>(plan.out_shape.numel());
  return scale(sum(x, axes), 1.0 / count);
}

Tensor5 max(const Tensor5& x, std::initializer_list<int> axes) {
  const ReducePlan plan = plan_reduce(x.shape(), axes);
  auto xd = x.data();
  const auto out_n = static_cast<std::size_t>(plan.out_shape.numel());
  std::vector<double> out(out_n, -std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> argmax(out_n, -1);
  // Row-major traversal visits lower flat indices first; strict '>' keeps the first.
  for_each_reduce(x.shape(), plan, [&](std::int64_t i, std::int64_t o) {
    const auto oi = static_cast<std::size_t>(o);
    if (argmax[oi] < 0 || xd[static_cast<std::size_t>(i)] > out[oi]) {
      out[oi] = xd[static_cast<std::size_t>(i)];
      argmax[oi] = i;
    }
  });
  TensorImpl* xi = x.impl();
  return make_result(plan.out_shape, std::move(out), {x}, [=](TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::size_t k = 0; k < argmax.size(); ++k) {
        gx[static_cast<std::size_t>(argmax[k])] += o->grad[k];
      }
    };
  });
}

Tensor5 sum_all(const Tensor5& x) {
  return sum(x, {kBatch, kChannel, kTime, kHeight, kWidth});
}

Tensor5 mean_all(const Tensor5& x) {
  return mean(x, {kBatch, kChannel, kTime, kHeight, kWidth});
}

Tensor5 slice(const Tensor5& x, int axis, std::int64_t start, std::int64_t count,
              std::int64_t step) {
  const Shape5& s = x.shape();
  if (axis < 0 || axis > 4 || step < 1 || count < 1 || start < 0 ||
      start + (count - 1) * step >= s[axis]) {
    throw DimensionError("slice: range start=" + std::to_string(start) +
                         " count=" + std::to_string(count) + " step=" + std::to_string(step) +
                         " invalid for axis " + std::to_string(axis) + " of " + s.str());
  }
  Shape5 out_shape = s;
  out_shape[axis] = count;
  const std::int64_t outer = outer_size(s, axis);
  const std::int64_t inner = inner_size(s, axis);
  const std::int64_t dim = s[axis];
  auto xd = x.data();
  std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < count; ++k) {
      const auto src = xd.begin() + (o * dim + start + k * step) * inner;
      std::copy(src, src + inner, out.begin() + (o * count + k) * inner);
    }
  }
  TensorImpl* xi = x.impl();
  return make_result(out_shape, std::move(out), {x}, [=](TensorImpl* op) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t k = 0; k < count; ++k) {
          const std::int64_t dst = (o * dim + start + k * step) * inner;
          const std::int64_t src = (o * count + k) * inner;
          for (std::int64_t i = 0; i < inner; ++i) {
            gx[static_cast<std::size_t>(dst + i)] += op->grad[static_cast<std::size_t>(src + i)];
          }
        }
      }
    };
  });
}

Tensor5 concat(const std::vector<Tensor5>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis < 0 || axis > 4) throw DimensionError("concat: axis out of range");
  Shape5 out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    for (int a = 0; a < 5; ++a) {
      if (a != axis && p.shape()[a] != parts[0].shape()[a]) {
        throw DimensionError("concat: shape mismatch " + parts[0].shape().str() + " vs " +
                             p.shape().str() + " along axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const std::int64_t outer = outer_size(out_shape, axis);
  const std::int64_t inner = inner_size(out_shape, axis);
  const std::int64_t total = out_shape[axis];
  std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::int64_t d = p.shape()[axis];
    auto pd = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(pd.begin() + o * d * inner, pd.begin() + (o + 1) * d * inner,
                out.begin() + (o * total + off) * inner);
    }
    off += d;
  }
  std::vector<TensorImpl*> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_result(out_shape, std::move(out), parts, [=](TensorImpl* op) {
    return [=]() {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        TensorImpl* pi = impls[k];
        if (!pi->requires_grad) continue;
        auto& gp = pi->ensure_grad();
        const std::int64_t d = pi->shape[axis];
        for (std::int64_t o = 0; o < outer; ++o) {
          const std::int64_t src = (o * total + offsets[k]) * inner;
          const std::int64_t dst = o * d * inner;
          for (std::int64_t i = 0; i < d * inner; ++i) {
            gp[static_cast<std::size_t>(dst + i)] += op->grad[static_cast<std::size_t>(src + i)];
          }
        }
      }
    };
  });
}

Tensor5 reshape(const Tensor5& x, const Shape5& shape) {
  if (shape.numel() != x.numel()) {
    throw DimensionError("reshape: " + x.shape().str() + " to " + shape.str());
  }
  auto xd = x.data();
  TensorImpl* xi = x.impl();
  return make_result(shape, std::vector<double>(xd.begin(), xd.end()), {x},
                     [=](TensorImpl* o) {
                       return [=]() {
                         if (!xi->requires_grad) return;
                         auto& gx = xi->ensure_grad();
                         for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i];
                       };
                     });
}

namespace {

// Index map for space_to_channel: out flat index -> in flat index.
std::vector<std::int64_t> squeeze_map(const Shape5& in) {
  const Shape5 out{in.n(), in.c() * 4, in.t(), in.h() / 2, in.w() / 2};
  std::vector<std::int64_t> map(static_cast<std::size_t>(out.numel()));
  std::size_t k = 0;
  for (std::int64_t n = 0; n < out.n(); ++n)
    for (std::int64_t oc = 0; oc < out.c(); ++oc) {
      const std::int64_t c = oc / 4, dy = (oc % 4) / 2, dx = oc % 2;
      for (std::int64_t t = 0; t < out.t(); ++t)
        for (std::int64_t i = 0; i < out.h(); ++i)
          for (std::int64_t j = 0; j < out.w(); ++j) {
            map[k++] = (((n * in.c() + c) * in.t() + t) * in.h() + 2 * i + dy) * in.w() + 2 * j + dx;
          }
    }
  return map;
}

// out[i] = x[map[i]] (gather) or out[map[i]] = x[i] (scatter); both are permutations.
Tensor5 permute_op(const Tensor5& x, const Shape5& out_shape,
                   std::shared_ptr<const std::vector<std::int64_t>> map, bool gather) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  const auto& m = *map;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (gather) out[i] = xd[static_cast<std::size_t>(m[i])];
    else out[static_cast<std::size_t>(m[i])] = xd[i];
  }
  TensorImpl* xi = x.impl();
  return make_result(out_shape, std::move(out), {x}, [=](TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      const auto& mm = *map;
      for (std::size_t i = 0; i < mm.size(); ++i) {
        if (gather) gx[static_cast<std::size_t>(mm[i])] += o->grad[i];
        else gx[i] += o->grad[static_cast<std::size_t>(mm[i])];
      }
    };
  });
}

}  // namespace

Tensor5 space_to_channel(const Tensor5& x) {
  const Shape5& s = x.shape();
  if (s.h() % 2 != 0 || s.w() % 2 != 0) {
    throw DimensionError("space_to_channel: spatial dims of " + s.str() + " not even");
  }
  auto map = std::make_shared<const std::vector<std::int64_t>>(squeeze_map(s));
  return permute_op(x, Shape5{s.n(), s.c() * 4, s.t(), s.h() / 2, s.w() / 2}, map, true);
}

Tensor5 channel_to_space(const Tensor5& x) {
  const Shape5& s = x.shape();
  if (s.c() % 4 != 0) {
    throw DimensionError("channel_to_space: channels of " + s.str() + " not divisible by 4");
  }
  const Shape5 out{s.n(), s.c() / 4, s.t(), s.h() * 2, s.w() * 2};
  auto map = std::make_shared<const std::vector<std::int64_t>>(squeeze_map(out));
  return permute_op(x, out, map, false);
}

double dot(const Tensor5& a, const Tensor5& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("dot: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double acc = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) acc += ad[i] * bd[i];
  return acc;
}

}  // namespace itae
