#include "itae/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "itae/errors.hpp"

namespace itae {

using detail::make_result;
using detail::TensorImpl;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer size (doubles) per chunk.
constexpr std::int64_t kMaxColElements = std::int64_t{1} << 22;

// Geometry of a forward convolution: "in" is the convolved signal, "out" the result.
struct ConvGeometry {
  std::int64_t in_ch, it, ih, iw;
  std::int64_t out_ch, ot, oh, ow;
  Triple k, s, p;

  std::int64_t in_size() const { return in_ch * it * ih * iw; }
  std::int64_t out_positions() const { return ot * oh * ow; }
  std::int64_t patch() const { return in_ch * k[0] * k[1] * k[2]; }
  std::int64_t chunk() const {
    return std::clamp<std::int64_t>(kMaxColElements / patch(), 1, out_positions());
  }
};

// col(K x n) row-major, columns = output positions [p0, p0 + n).
void im2col(const double* x, const ConvGeometry& g, std::int64_t p0, std::int64_t n, double* col) {
  std::vector<std::int64_t> bt(static_cast<std::size_t>(n)), bh(bt.size()), bw(bt.size());
  for (std::int64_t j = 0; j < n; ++j) {
    const std::int64_t pos = p0 + j;
    const std::int64_t to = pos / (g.oh * g.ow);
    const std::int64_t ho = (pos / g.ow) % g.oh;
    const std::int64_t wo = pos % g.ow;
    bt[static_cast<std::size_t>(j)] = to * g.s[0] - g.p[0];
    bh[static_cast<std::size_t>(j)] = ho * g.s[1] - g.p[1];
    bw[static_cast<std::size_t>(j)] = wo * g.s[2] - g.p[2];
  }
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.in_ch; ++c)
    for (std::int64_t dt = 0; dt < g.k[0]; ++dt)
      for (std::int64_t dh = 0; dh < g.k[1]; ++dh)
        for (std::int64_t dw = 0; dw < g.k[2]; ++dw, ++row) {
          double* dst = col + row * n;
          const double* src_c = x + c * g.it * g.ih * g.iw;
          for (std::int64_t j = 0; j < n; ++j) {
            const auto sj = static_cast<std::size_t>(j);
            const std::int64_t t = bt[sj] + dt, h = bh[sj] + dh, w = bw[sj] + dw;
            dst[j] = (t >= 0 && t < g.it && h >= 0 && h < g.ih && w >= 0 && w < g.iw)
                         ? src_c[(t * g.ih + h) * g.iw + w]
                         : 0.0;
          }
        }
}

// Adjoint of im2col: scatter-add col back into x.
void col2im_add(const double* col, const ConvGeometry& g, std::int64_t p0, std::int64_t n,
                double* x) {
  std::vector<std::int64_t> bt(static_cast<std::size_t>(n)), bh(bt.size()), bw(bt.size());
  for (std::int64_t j = 0; j < n; ++j) {
    const std::int64_t pos = p0 + j;
    bt[static_cast<std::size_t>(j)] = pos / (g.oh * g.ow) * g.s[0] - g.p[0];
    bh[static_cast<std::size_t>(j)] = (pos / g.ow) % g.oh * g.s[1] - g.p[1];
    bw[static_cast<std::size_t>(j)] = pos % g.ow * g.s[2] - g.p[2];
  }
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.in_ch; ++c)
    for (std::int64_t dt = 0; dt < g.k[0]; ++dt)
      for (std::int64_t dh = 0; dh < g.k[1]; ++dh)
        for (std::int64_t dw = 0; dw < g.k[2]; ++dw, ++row) {
          const double* src = col + row * n;
          double* dst_c = x + c * g.it * g.ih * g.iw;
          for (std::int64_t j = 0; j < n; ++j) {
            const auto sj = static_cast<std::size_t>(j);
            const std::int64_t t = bt[sj] + dt, h = bh[sj] + dh, w = bw[sj] + dw;
            if (t >= 0 && t < g.it && h >= 0 && h < g.ih && w >= 0 && w < g.iw) {
              dst_c[(t * g.ih + h) * g.iw + w] += src[j];
            }
          }
        }
}

// out_block(Co x n) = W(Co x K) * im2col(x)
void conv_forward_sample(const double* x, const double* w, const ConvGeometry& g, double* y) {
  const std::int64_t P = g.out_positions(), K = g.patch(), step = g.chunk();
  std::vector<double> col(static_cast<std::size_t>(K * step));
  ConstMapMat W(w, g.out_ch, K);
  for (std::int64_t p0 = 0; p0 < P; p0 += step) {
    const std::int64_t n = std::min(step, P - p0);
    im2col(x, g, p0, n, col.data());
    StridedMap Y(y + p0, g.out_ch, n, Eigen::OuterStride<>(P));
    Y.noalias() = W * ConstMapMat(col.data(), K, n);
  }
}

// x += adjoint applied to y_block: col = W^T y, then col2im.
void conv_adjoint_sample(const double* y, const double* w, const ConvGeometry& g, double* x) {
  const std::int64_t P = g.out_positions(), K = g.patch(), step = g.chunk();
  std::vector<double> col(static_cast<std::size_t>(K * step));
  ConstMapMat W(w, g.out_ch, K);
  for (std::int64_t p0 = 0; p0 < P; p0 += step) {
    const std::int64_t n = std::min(step, P - p0);
    ConstStridedMap Y(y + p0, g.out_ch, n, Eigen::OuterStride<>(P));
    MapMat C(col.data(), K, n);
    C.noalias() = W.transpose() * Y;
    col2im_add(col.data(), g, p0, n, x);
  }
}

// gw += y_block * im2col(x)^T
void conv_weight_grad_sample(const double* x, const double* y, const ConvGeometry& g,
                             double* gw) {
  const std::int64_t P = g.out_positions(), K = g.patch(), step = g.chunk();
  std::vector<double> col(static_cast<std::size_t>(K * step));
  MapMat GW(gw, g.out_ch, K);
  for (std::int64_t p0 = 0; p0 < P; p0 += step) {
    const std::int64_t n = std::min(step, P - p0);
    im2col(x, g, p0, n, col.data());
    ConstStridedMap Y(y + p0, g.out_ch, n, Eigen::OuterStride<>(P));
    GW.noalias() += Y * ConstMapMat(col.data(), K, n).transpose();
  }
}

ConvGeometry geometry(const Shape5& conv_in, const Shape5& weight, const Shape5& conv_out,
                      const Triple& stride, const Triple& padding) {
  return ConvGeometry{conv_in.c(),  conv_in.t(),  conv_in.h(),  conv_in.w(),
                      weight.n(),   conv_out.t(), conv_out.h(), conv_out.w(),
                      {weight.t(), weight.h(), weight.w()}, stride, padding};
}

}  // namespace

std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                          std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0 || stride < 1) return 0;
  return span / stride + 1;
}

std::int64_t conv_transpose_out_dim(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                    std::int64_t pad, std::int64_t output_padding) {
  return (in - 1) * stride - 2 * pad + kernel + output_padding;
}

Shape5 conv3d_shape(const Shape5& input, const Shape5& weight, const Triple& stride,
                    const Triple& padding) {
  if (weight.c() != input.c()) {
    throw DimensionError("conv3d: weight " + weight.str() + " expects " +
                         std::to_string(weight.c()) + " input channels, input is " +
                         input.str());
  }
  Shape5 out{input.n(), weight.n(), 1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    const auto sa = static_cast<std::size_t>(a);
    const std::int64_t d = conv_out_dim(input[a + 2], weight[a + 2], stride[sa], padding[sa]);
    if (d < 1) {
      throw DimensionError("conv3d: padded input " + input.str() + " smaller than kernel " +
                           weight.str());
    }
    out[a + 2] = d;
  }
  return out;
}

Shape5 conv_transpose3d_shape(const Shape5& input, const Shape5& weight, const Triple& stride,
                              const Triple& padding, const Triple& output_padding) {
  if (weight.n() != input.c()) {
    throw DimensionError("conv_transpose3d: weight " + weight.str() + " expects " +
                         std::to_string(weight.n()) + " input channels, input is " +
                         input.str());
  }
  Shape5 out{input.n(), weight.c(), 1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    const auto sa = static_cast<std::size_t>(a);
    if (output_padding[sa] < 0 || output_padding[sa] >= stride[sa]) {
      throw DimensionError("conv_transpose3d: output_padding must be in [0, stride)");
    }
    const std::int64_t d =
        conv_transpose_out_dim(input[a + 2], weight[a + 2], stride[sa], padding[sa],
                               output_padding[sa]);
    if (d < 1) {
      throw DimensionError("conv_transpose3d: input " + input.str() + " too small for kernel " +
                           weight.str());
    }
    out[a + 2] = d;
  }
  return out;
}

Tensor5 conv3d(const Tensor5& input, const Tensor5& weight, const Triple& stride,
               const Triple& padding) {
  const Shape5 out_shape = conv3d_shape(input.shape(), weight.shape(), stride, padding);
  const ConvGeometry g = geometry(input.shape(), weight.shape(), out_shape, stride, padding);
  const std::int64_t batch = input.shape().n();
  const std::int64_t out_sample = out_shape.sample_size();
  std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
  for (std::int64_t n = 0; n < batch; ++n) {
    conv_forward_sample(input.data().data() + n * g.in_size(), weight.data().data(), g,
                        out.data() + n * out_sample);
  }
  TensorImpl* xi = input.impl();
  TensorImpl* wi = weight.impl();
  return make_result(out_shape, std::move(out), {input, weight}, [=](TensorImpl* o) {
    return [=]() {
      for (std::int64_t n = 0; n < batch; ++n) {
        const double* gy = o->grad.data() + n * out_sample;
        if (xi->requires_grad) {
          conv_adjoint_sample(gy, wi->data.data(), g, xi->ensure_grad().data() + n * g.in_size());
        }
        if (wi->requires_grad) {
          conv_weight_grad_sample(xi->data.data() + n * g.in_size(), gy, g,
                                  wi->ensure_grad().data());
        }
      }
    };
  });
}

Tensor5 conv_transpose3d(const Tensor5& input, const Tensor5& weight, const Triple& stride,
                         const Triple& padding, const Triple& output_padding) {
  const Shape5 out_shape =
      conv_transpose3d_shape(input.shape(), weight.shape(), stride, padding, output_padding);
  // The transposed op's output plays the role of the forward conv's input.
  const ConvGeometry g = geometry(out_shape, weight.shape(), input.shape(), stride, padding);
  const std::int64_t batch = input.shape().n();
  const std::int64_t in_sample = input.shape().sample_size();
  std::vector<double> out(static_cast<std::size_t>(out_shape.numel()), 0.0);
  for (std::int64_t n = 0; n < batch; ++n) {
    conv_adjoint_sample(input.data().data() + n * in_sample, weight.data().data(), g,
                        out.data() + n * g.in_size());
  }
  TensorImpl* yi = input.impl();
  TensorImpl* wi = weight.impl();
  return make_result(out_shape, std::move(out), {input, weight}, [=](TensorImpl* o) {
    return [=]() {
      for (std::int64_t n = 0; n < batch; ++n) {
        const double* gx = o->grad.data() + n * g.in_size();
        if (yi->requires_grad) {
          std::vector<double> tmp(static_cast<std::size_t>(in_sample));
          conv_forward_sample(gx, wi->data.data(), g, tmp.data());
          double* gy = yi->ensure_grad().data() + n * in_sample;
          for (std::int64_t i = 0; i < in_sample; ++i) gy[i] += tmp[static_cast<std::size_t>(i)];
        }
        if (wi->requires_grad) {
          conv_weight_grad_sample(gx, yi->data.data() + n * in_sample, g,
                                  wi->ensure_grad().data());
        }
      }
    };
  });
}

}  // namespace itae
