#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "rfp/kernels.hpp"
#include "rfp/ops.hpp"

namespace rfp::ops {

namespace {

constexpr const char* kAxisNames[3] = {"H", "W", "D"};

struct ConvPlan {
  Dims5 in;
  std::size_t out_channels;
  Triple k;
  Triple out;
  ConvGeometry geo;

  std::size_t kvol() const { return k[0] * k[1] * k[2]; }
  std::size_t col_rows() const { return in.c * kvol(); }
  std::size_t out_spatial() const { return out[0] * out[1] * out[2]; }
  bool pointwise() const {
    return kvol() == 1 && geo.stride == Triple{1, 1, 1} && geo.padding == Triple{0, 0, 0};
  }
};

ConvPlan plan_conv(const Shape& input, const Shape& kernel, const ConvGeometry& geo) {
  const Dims5 in = dims5(input, "conv3d input");
  if (kernel.size() != 5) {
    throw ShapeError("conv3d kernel must be [Co, Ci, kh, kw, kd], got " + shape_string(kernel));
  }
  if (kernel[1] != in.c) {
    throw ShapeError("conv3d channel axis mismatch: kernel expects " + std::to_string(kernel[1]) +
                     " input channels, input has " + std::to_string(in.c));
  }
  for (int a = 0; a < 3; ++a) {
    if (geo.stride[a] == 0) {
      throw ShapeError(std::string("conv3d stride on axis ") + kAxisNames[a] + " must be >= 1");
    }
  }
  ConvPlan p{in, kernel[0], {kernel[2], kernel[3], kernel[4]}, {}, geo};
  p.out = conv_output_extent({in.h, in.w, in.d}, p.k, geo);
  return p;
}

// Output depths od whose input depth od*stride + kc - pad lies inside
// [0, in.d), as a half-open range.
inline std::pair<std::size_t, std::size_t> depth_range(const ConvPlan& p, std::size_t kc) {
  const std::size_t s = p.geo.stride[2];
  const std::size_t pad = p.geo.padding[2];
  std::size_t lo = kc >= pad ? 0 : (pad - kc + s - 1) / s;
  // Largest od with od*s + kc - pad <= in.d - 1.
  std::size_t hi = 0;
  if (p.in.d + pad > kc) hi = std::min(p.out[2], (p.in.d - 1 + pad - kc) / s + 1);
  lo = std::min(lo, hi);
  return {lo, hi};
}

// col[(ci, a, b, c), (oh, ow, od)] = input[ci, oh*s + a - pad, ...] or 0.
template <typename T>
void im2col(const T* x, const ConvPlan& p, T* col) {
  const std::size_t ps = p.out_spatial();
  const std::size_t hw = p.in.w * p.in.d;
  const std::size_t sd = p.geo.stride[2];
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < p.in.c; ++ci) {
    const T* xc = x + ci * p.in.spatial();
    for (std::size_t ka = 0; ka < p.k[0]; ++ka) {
      for (std::size_t kb = 0; kb < p.k[1]; ++kb) {
        for (std::size_t kc = 0; kc < p.k[2]; ++kc, ++row) {
          T* dst = col + row * ps;
          const auto [lo, hi] = depth_range(p, kc);
          for (std::size_t oh = 0; oh < p.out[0]; ++oh) {
            const long ih = static_cast<long>(oh * p.geo.stride[0] + ka) - static_cast<long>(p.geo.padding[0]);
            for (std::size_t ow = 0; ow < p.out[1]; ++ow) {
              T* d = dst + (oh * p.out[1] + ow) * p.out[2];
              const long iw = static_cast<long>(ow * p.geo.stride[1] + kb) - static_cast<long>(p.geo.padding[1]);
              if (ih < 0 || ih >= static_cast<long>(p.in.h) || iw < 0 || iw >= static_cast<long>(p.in.w)) {
                for (std::size_t od = 0; od < p.out[2]; ++od) d[od] = T{0};
                continue;
              }
              const T* src = xc + static_cast<std::size_t>(ih) * hw + static_cast<std::size_t>(iw) * p.in.d;
              for (std::size_t od = 0; od < lo; ++od) d[od] = T{0};
              if (sd == 1) {
                const T* s = src + (lo + kc - p.geo.padding[2]);
                for (std::size_t od = lo; od < hi; ++od) d[od] = s[od - lo];
              } else {
                for (std::size_t od = lo; od < hi; ++od) d[od] = src[od * sd + kc - p.geo.padding[2]];
              }
              for (std::size_t od = hi; od < p.out[2]; ++od) d[od] = T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvPlan& p, T* x) {
  const std::size_t ps = p.out_spatial();
  const std::size_t hw = p.in.w * p.in.d;
  const std::size_t sd = p.geo.stride[2];
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < p.in.c; ++ci) {
    T* xc = x + ci * p.in.spatial();
    for (std::size_t ka = 0; ka < p.k[0]; ++ka) {
      for (std::size_t kb = 0; kb < p.k[1]; ++kb) {
        for (std::size_t kc = 0; kc < p.k[2]; ++kc, ++row) {
          const T* src = col + row * ps;
          const auto [lo, hi] = depth_range(p, kc);
          for (std::size_t oh = 0; oh < p.out[0]; ++oh) {
            const long ih = static_cast<long>(oh * p.geo.stride[0] + ka) - static_cast<long>(p.geo.padding[0]);
            if (ih < 0 || ih >= static_cast<long>(p.in.h)) continue;
            for (std::size_t ow = 0; ow < p.out[1]; ++ow) {
              const long iw = static_cast<long>(ow * p.geo.stride[1] + kb) - static_cast<long>(p.geo.padding[1]);
              if (iw < 0 || iw >= static_cast<long>(p.in.w)) continue;
              const T* s = src + (oh * p.out[1] + ow) * p.out[2];
              T* dst = xc + static_cast<std::size_t>(ih) * hw + static_cast<std::size_t>(iw) * p.in.d;
              for (std::size_t od = lo; od < hi; ++od) dst[od * sd + kc - p.geo.padding[2]] += s[od];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Triple conv_output_extent(const Triple& in, const Triple& kernel, const ConvGeometry& geo) {
  Triple out{};
  for (int a = 0; a < 3; ++a) {
    if (geo.stride[a] == 0) {
      throw ShapeError(std::string("stride on axis ") + kAxisNames[a] + " must be >= 1");
    }
    const std::size_t padded = in[a] + 2 * geo.padding[a];
    if (padded < kernel[a]) {
      throw ShapeError(std::string("empty output on axis ") + kAxisNames[a] + ": extent " +
                       std::to_string(in[a]) + " + 2*" + std::to_string(geo.padding[a]) +
                       " padding is smaller than kernel " + std::to_string(kernel[a]));
    }
    out[a] = (padded - kernel[a]) / geo.stride[a] + 1;
  }
  return out;
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, const ConvGeometry& geo) {
  const ConvPlan p = plan_conv(input.shape(), kernel.shape(), geo);
  if (bias.size() != p.out_channels) {
    throw ShapeError("conv3d bias length " + std::to_string(bias.size()) + " vs " +
                     std::to_string(p.out_channels) + " output channels");
  }
  BasicTensor<T> out({p.in.n, p.out_channels, p.out[0], p.out[1], p.out[2]});
  const std::size_t ps = p.out_spatial();
  std::vector<T> col;
  if (!p.pointwise()) col.resize(p.col_rows() * ps);
  for (std::size_t n = 0; n < p.in.n; ++n) {
    const T* x = input.ptr() + n * p.in.c * p.in.spatial();
    const T* b = x;
    if (!p.pointwise()) {
      im2col(x, p, col.data());
      b = col.data();
    }
    T* y = out.ptr() + n * p.out_channels * ps;
    kernels::gemm_nn<T>(p.out_channels, ps, p.col_rows(), kernel.ptr(), p.col_rows(), b, ps, y,
                        ps, false);
    for (std::size_t co = 0; co < p.out_channels; ++co) {
      const T bv = bias[co];
      T* yc = y + co * ps;
      for (std::size_t i = 0; i < ps; ++i) yc[i] += bv;
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                             const BasicTensor<T>& grad_out, const ConvGeometry& geo,
                             bool want_input_grad) {
  const ConvPlan p = plan_conv(input.shape(), kernel.shape(), geo);
  const Shape expect{p.in.n, p.out_channels, p.out[0], p.out[1], p.out[2]};
  require_same_shape(grad_out.shape(), expect, "conv3d grad_out");
  const std::size_t ps = p.out_spatial();
  const std::size_t rows = p.col_rows();

  ConvGrads<T> g{BasicTensor<T>(), BasicTensor<T>(kernel.shape()), BasicTensor<T>({p.out_channels})};
  if (want_input_grad) g.input = BasicTensor<T>(input.shape());

  // Kernel transposed to [rows, Co] for the input-gradient product.
  std::vector<T> kt;
  if (want_input_grad) {
    kt.resize(rows * p.out_channels);
    for (std::size_t co = 0; co < p.out_channels; ++co)
      for (std::size_t r = 0; r < rows; ++r) kt[r * p.out_channels + co] = kernel[co * rows + r];
  }

  std::vector<T> col;
  std::vector<T> gcol;
  if (!p.pointwise()) {
    col.resize(rows * ps);
    if (want_input_grad) gcol.resize(rows * ps);
  }
  for (std::size_t n = 0; n < p.in.n; ++n) {
    const T* x = input.ptr() + n * p.in.c * p.in.spatial();
    const T* gy = grad_out.ptr() + n * p.out_channels * ps;
    for (std::size_t co = 0; co < p.out_channels; ++co) {
      T acc{0};
      const T* gyc = gy + co * ps;
      for (std::size_t i = 0; i < ps; ++i) acc += gyc[i];
      g.bias[co] += acc;
    }
    const T* b = x;
    if (!p.pointwise()) {
      im2col(x, p, col.data());
      b = col.data();
    }
    kernels::gemm_nt<T>(p.out_channels, rows, ps, gy, ps, b, ps, g.kernel.ptr(), rows, true);
    if (want_input_grad) {
      T* gx = g.input.ptr() + n * p.in.c * p.in.spatial();
      if (p.pointwise()) {
        kernels::gemm_nn<T>(rows, ps, p.out_channels, kt.data(), p.out_channels, gy, ps, gx, ps,
                            false);
      } else {
        kernels::gemm_nn<T>(rows, ps, p.out_channels, kt.data(), p.out_channels, gy, ps,
                            gcol.data(), ps, false);
        col2im(gcol.data(), p, gx);
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, T eps, BatchNormSaved<T>& saved) {
  const Dims5 d = dims5(x.shape(), "batch_norm input");
  if (gamma.size() != d.c || beta.size() != d.c) {
    throw ShapeError("batch_norm affine parameters must have " + std::to_string(d.c) + " entries");
  }
  const std::size_t s = d.spatial();
  const double count = static_cast<double>(d.n * s);
  saved.mean.assign(d.c, T{0});
  saved.var.assign(d.c, T{0});
  saved.inv_std.assign(d.c, T{0});
  saved.normalized = BasicTensor<T>(x.shape());
  BasicTensor<T> out(x.shape());
  for (std::size_t c = 0; c < d.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* xc = x.ptr() + (n * d.c + c) * s;
      for (std::size_t i = 0; i < s; ++i) sum += static_cast<double>(xc[i]);
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* xc = x.ptr() + (n * d.c + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        const double dv = static_cast<double>(xc[i]) - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / count;
    const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
    saved.mean[c] = static_cast<T>(mean);
    saved.var[c] = static_cast<T>(var);
    saved.inv_std[c] = static_cast<T>(inv_std);
    const T g = gamma[c];
    const T bt = beta[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * s;
      const T* xc = x.ptr() + off;
      T* xh = saved.normalized.ptr() + off;
      T* yc = out.ptr() + off;
      for (std::size_t i = 0; i < s; ++i) {
        xh[i] = static_cast<T>((static_cast<double>(xc[i]) - mean) * inv_std);
        yc[i] = g * xh[i] + bt;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                               const BasicTensor<T>& running_var, T eps) {
  const Dims5 d = dims5(x.shape(), "batch_norm input");
  const std::size_t s = d.spatial();
  BasicTensor<T> out(x.shape());
  for (std::size_t c = 0; c < d.c; ++c) {
    const T scale = gamma[c] / std::sqrt(running_var[c] + eps);
    const T shift = beta[c] - running_mean[c] * scale;
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * s;
      for (std::size_t i = 0; i < s; ++i) out[off + i] = x[off + i] * scale + shift;
    }
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_train_backward(const BasicTensor<T>& grad_out,
                                            const BasicTensor<T>& gamma,
                                            const BatchNormSaved<T>& saved) {
  const Dims5 d = dims5(grad_out.shape(), "batch_norm grad");
  const std::size_t s = d.spatial();
  const double count = static_cast<double>(d.n * s);
  BatchNormGrads<T> g{BasicTensor<T>(grad_out.shape()), BasicTensor<T>({d.c}),
                      BasicTensor<T>({d.c})};
  for (std::size_t c = 0; c < d.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        const double dy = grad_out[off + i];
        sum_dy += dy;
        sum_dy_xh += dy * static_cast<double>(saved.normalized[off + i]);
      }
    }
    g.beta[c] = static_cast<T>(sum_dy);
    g.gamma[c] = static_cast<T>(sum_dy_xh);
    const double k = static_cast<double>(gamma[c]) * static_cast<double>(saved.inv_std[c]) / count;
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        const double xh = saved.normalized[off + i];
        g.input[off + i] =
            static_cast<T>(k * (count * static_cast<double>(grad_out[off + i]) - sum_dy - xh * sum_dy_xh));
      }
    }
  }
  return g;
}

#define RFP_INSTANTIATE(T)                                                                        \
  template BasicTensor<T> conv3d<T>(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                    const BasicTensor<T>&, const ConvGeometry&);                  \
  template ConvGrads<T> conv3d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                           const BasicTensor<T>&, const ConvGeometry&, bool);     \
  template BasicTensor<T> batch_norm_train<T>(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                              const BasicTensor<T>&, T, BatchNormSaved<T>&);      \
  template BasicTensor<T> batch_norm_eval<T>(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                             const BasicTensor<T>&, const BasicTensor<T>&,        \
                                             const BasicTensor<T>&, T);                           \
  template BatchNormGrads<T> batch_norm_train_backward<T>(                                        \
      const BasicTensor<T>&, const BasicTensor<T>&, const BatchNormSaved<T>&);

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::ops
