#include <cmath>
#include <limits>
#include <string>

#include "rfp/ops.hpp"

namespace rfp::ops {

namespace {

struct AxisTaps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

// Half-pixel mapping src = (dst + 0.5) * in/out - 0.5, clamped at the borders.
AxisTaps axis_taps(std::size_t in, std::size_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 >= in - 1) {
      t.lo[o] = t.hi[o] = in - 1;
      t.frac[o] = 0.0;
    } else {
      t.lo[o] = i0;
      t.hi[o] = i0 + 1;
      t.frac[o] = src - static_cast<double>(i0);
    }
  }
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& input, const Triple& window, const Triple& stride,
                         std::vector<std::size_t>* argmax) {
  const Dims5 d = dims5(input.shape(), "maxpool3d input");
  const Triple in{d.h, d.w, d.d};
  Triple out{};
  for (int a = 0; a < 3; ++a) {
    if (window[a] == 0 || stride[a] == 0) throw ShapeError("maxpool3d window and stride must be >= 1");
    if (window[a] > in[a]) {
      throw ShapeError("maxpool3d window " + std::to_string(window[a]) + " exceeds extent " +
                       std::to_string(in[a]) + " on spatial axis " + std::to_string(a));
    }
    out[a] = (in[a] - window[a]) / stride[a] + 1;
  }
  BasicTensor<T> y({d.n, d.c, out[0], out[1], out[2]});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const std::size_t base = nc * d.spatial();
    for (std::size_t oh = 0; oh < out[0]; ++oh)
      for (std::size_t ow = 0; ow < out[1]; ++ow)
        for (std::size_t od = 0; od < out[2]; ++od, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = std::numeric_limits<std::size_t>::max();
          for (std::size_t a = 0; a < window[0]; ++a)
            for (std::size_t b = 0; b < window[1]; ++b)
              for (std::size_t c = 0; c < window[2]; ++c) {
                const std::size_t idx = base +
                                        ((oh * stride[0] + a) * d.w + (ow * stride[1] + b)) * d.d +
                                        od * stride[2] + c;
                if (best_idx == std::numeric_limits<std::size_t>::max() || input[idx] > best) {
                  best = input[idx];
                  best_idx = idx;
                }
              }
          y[o] = best;
          if (argmax) (*argmax)[o] = best_idx;
        }
  }
  return y;
}

template <typename T>
BasicTensor<T> maxpool3d_backward(const BasicTensor<T>& grad_out,
                                  const std::vector<std::size_t>& argmax, const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool3d_backward: argmax length mismatch");
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
BasicTensor<T> resize_trilinear(const BasicTensor<T>& input, const Triple& target) {
  const Dims5 d = dims5(input.shape(), "resize_trilinear input");
  for (std::size_t a = 0; a < 3; ++a) {
    if (target[a] == 0) throw ShapeError("resize_trilinear target extent on axis " + std::to_string(a) + " is zero");
  }
  if (target == Triple{d.h, d.w, d.d}) return input;
  const AxisTaps th = axis_taps(d.h, target[0]);
  const AxisTaps tw = axis_taps(d.w, target[1]);
  const AxisTaps td = axis_taps(d.d, target[2]);
  BasicTensor<T> y({d.n, d.c, target[0], target[1], target[2]});
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const T* x = input.ptr() + nc * d.spatial();
    for (std::size_t oh = 0; oh < target[0]; ++oh) {
      const T fh = static_cast<T>(th.frac[oh]);
      const T* xh0 = x + th.lo[oh] * d.w * d.d;
      const T* xh1 = x + th.hi[oh] * d.w * d.d;
      for (std::size_t ow = 0; ow < target[1]; ++ow) {
        const T fw = static_cast<T>(tw.frac[ow]);
        const T* r00 = xh0 + tw.lo[ow] * d.d;
        const T* r01 = xh0 + tw.hi[ow] * d.d;
        const T* r10 = xh1 + tw.lo[ow] * d.d;
        const T* r11 = xh1 + tw.hi[ow] * d.d;
        for (std::size_t od = 0; od < target[2]; ++od, ++o) {
          const T fd = static_cast<T>(td.frac[od]);
          const std::size_t d0 = td.lo[od];
          const std::size_t d1 = td.hi[od];
          const T v00 = r00[d0] + fd * (r00[d1] - r00[d0]);
          const T v01 = r01[d0] + fd * (r01[d1] - r01[d0]);
          const T v10 = r10[d0] + fd * (r10[d1] - r10[d0]);
          const T v11 = r11[d0] + fd * (r11[d1] - r11[d0]);
          const T v0 = v00 + fw * (v01 - v00);
          const T v1 = v10 + fw * (v11 - v10);
          y[o] = v0 + fh * (v1 - v0);
        }
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> resize_trilinear_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  const Dims5 d = dims5(input_shape, "resize_trilinear_backward input");
  const Dims5 g = dims5(grad_out.shape(), "resize_trilinear_backward grad");
  if (g.n != d.n || g.c != d.c) throw ShapeError("resize_trilinear_backward: batch/channel mismatch");
  if (g.h == d.h && g.w == d.w && g.d == d.d) return grad_out;
  const AxisTaps th = axis_taps(d.h, g.h);
  const AxisTaps tw = axis_taps(d.w, g.w);
  const AxisTaps td = axis_taps(d.d, g.d);
  BasicTensor<T> gx(input_shape);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    T* x = gx.ptr() + nc * d.spatial();
    for (std::size_t oh = 0; oh < g.h; ++oh) {
      const T fh = static_cast<T>(th.frac[oh]);
      T* xh0 = x + th.lo[oh] * d.w * d.d;
      T* xh1 = x + th.hi[oh] * d.w * d.d;
      for (std::size_t ow = 0; ow < g.w; ++ow) {
        const T fw = static_cast<T>(tw.frac[ow]);
        T* r00 = xh0 + tw.lo[ow] * d.d;
        T* r01 = xh0 + tw.hi[ow] * d.d;
        T* r10 = xh1 + tw.lo[ow] * d.d;
        T* r11 = xh1 + tw.hi[ow] * d.d;
        for (std::size_t od = 0; od < g.d; ++od, ++o) {
          const T fd = static_cast<T>(td.frac[od]);
          const std::size_t d0 = td.lo[od];
          const std::size_t d1 = td.hi[od];
          const T go = grad_out[o];
          const T g0 = go * (T{1} - fh);
          const T g1 = go * fh;
          const T g00 = g0 * (T{1} - fw);
          const T g01 = g0 * fw;
          const T g10 = g1 * (T{1} - fw);
          const T g11 = g1 * fw;
          r00[d0] += g00 * (T{1} - fd);
          r00[d1] += g00 * fd;
          r01[d0] += g01 * (T{1} - fd);
          r01[d1] += g01 * fd;
          r10[d0] += g10 * (T{1} - fd);
          r10[d1] += g10 * fd;
          r11[d0] += g11 * (T{1} - fd);
          r11[d1] += g11 * fd;
        }
      }
    }
  }
  return gx;
}

#define RFP_INSTANTIATE(T)                                                                       \
  template BasicTensor<T> maxpool3d<T>(const BasicTensor<T>&, const Triple&, const Triple&,      \
                                       std::vector<std::size_t>*);                               \
  template BasicTensor<T> maxpool3d_backward<T>(const BasicTensor<T>&,                           \
                                                const std::vector<std::size_t>&, const Shape&);  \
  template BasicTensor<T> resize_trilinear<T>(const BasicTensor<T>&, const Triple&);             \
  template BasicTensor<T> resize_trilinear_backward<T>(const BasicTensor<T>&, const Shape&);

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::ops
