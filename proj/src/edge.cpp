#include "rfp/edge.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <stdexcept>
#include <string>

namespace rfp::edge {

using ad::Tape;
using ad::Var;

EdgeMap EdgeMap::from_voxels(LabelVolume v) {
  EdgeMap m;
  for (std::uint8_t x : v.data) {
    if (x > 1) throw std::invalid_argument("edge map voxels must be 0 or 1");
    m.positives += x;
  }
  m.negatives = v.size() - m.positives;
  m.voxels = std::move(v);
  return m;
}

double EdgeMap::alpha() const {
  const std::size_t n = positives + negatives;
  return n == 0 ? 1.0 : double(negatives) / double(n);
}

std::string_view edge_mode_name(EdgeMode m) { return m == EdgeMode::canny ? "canny" : "transition"; }

EdgeMode parse_edge_mode(std::string_view s) {
  if (s == "canny") return EdgeMode::canny;
  if (s == "transition") return EdgeMode::transition;
  throw std::invalid_argument("unknown edge mode '" + std::string(s) + "' (expected canny or transition)");
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (double& v : k) v /= s;
  return k;
}

// Replicated-border read.
double px(const std::vector<double>& img, long h, long w, long r, long c) {
  r = std::clamp(r, 0L, h - 1);
  c = std::clamp(c, 0L, w - 1);
  return img[std::size_t(r * w + c)];
}

}  // namespace

std::vector<std::uint8_t> canny_2d(const std::vector<double>& image, std::size_t h, std::size_t w,
                                   const CannyParams& params) {
  if (image.size() != h * w) throw ShapeError("canny_2d: image size does not match extents");
  if (params.low_threshold > params.high_threshold) {
    throw std::invalid_argument("canny low threshold exceeds high threshold");
  }
  const long H = long(h), W = long(w);
  std::vector<double> smooth = image;
  if (params.gaussian_sigma > 0) {
    const std::vector<double> k = gaussian_kernel(params.gaussian_sigma);
    const long rad = long(k.size() / 2);
    std::vector<double> tmp(h * w);
    for (long r = 0; r < H; ++r)
      for (long c = 0; c < W; ++c) {
        double s = 0;
        for (long i = -rad; i <= rad; ++i) s += k[std::size_t(i + rad)] * px(image, H, W, r, c + i);
        tmp[std::size_t(r * W + c)] = s;
      }
    for (long r = 0; r < H; ++r)
      for (long c = 0; c < W; ++c) {
        double s = 0;
        for (long i = -rad; i <= rad; ++i) s += k[std::size_t(i + rad)] * px(tmp, H, W, r + i, c);
        smooth[std::size_t(r * W + c)] = s;
      }
  }

  std::vector<double> mag(h * w), gxs(h * w), gys(h * w);
  double max_mag = 0;
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c) {
      auto p = [&](long dr, long dc) { return px(smooth, H, W, r + dr, c + dc); };
      const double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
      const double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
      const std::size_t i = std::size_t(r * W + c);
      gxs[i] = gx;
      gys[i] = gy;
      mag[i] = std::hypot(gx, gy);
      max_mag = std::max(max_mag, mag[i]);
    }
  std::vector<std::uint8_t> out(h * w, 0);
  if (max_mag <= 0) return out;

  // Non-maximum suppression along the quantised gradient direction, with
  // near-ties kept (see CannyParams::nms_tolerance).
  auto mag_at = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= H || c >= W) return 0.0;
    return mag[std::size_t(r * W + c)];
  };
  std::vector<double> thin(h * w, 0.0);
  constexpr double kPi = 3.14159265358979323846;
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c) {
      const std::size_t i = std::size_t(r * W + c);
      if (mag[i] <= 0) continue;
      double angle = std::atan2(gys[i], gxs[i]) * 180.0 / kPi;
      if (angle < 0) angle += 180.0;
      long dr = 0, dc = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dc = 1;
      } else if (angle < 67.5) {
        dr = 1;
        dc = 1;
      } else if (angle < 112.5) {
        dr = 1;
      } else {
        dr = 1;
        dc = -1;
      }
      const double neighbour = std::max(mag_at(r + dr, c + dc), mag_at(r - dr, c - dc));
      if (mag[i] >= (1.0 - params.nms_tolerance) * neighbour) thin[i] = mag[i];
    }

  const double high = params.high_threshold * max_mag;
  const double low = params.low_threshold * max_mag;
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] > 0 && thin[i] >= high) {
      out[i] = 1;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const long r = long(i) / W, c = long(i) % W;
    for (long dr = -1; dr <= 1; ++dr)
      for (long dc = -1; dc <= 1; ++dc) {
        const long r2 = r + dr, c2 = c + dc;
        if (r2 < 0 || c2 < 0 || r2 >= H || c2 >= W) continue;
        const std::size_t j = std::size_t(r2 * W + c2);
        if (!out[j] && thin[j] > 0 && thin[j] >= low) {
          out[j] = 1;
          queue.push_back(j);
        }
      }
  }
  return out;
}

EdgeMap generate_reference_edges(const LabelVolume& labels, EdgeMode mode, const CannyParams& canny) {
  const std::size_t h = labels.extent[0], w = labels.extent[1], d = labels.extent[2];
  LabelVolume edges(labels.extent);
  if (mode == EdgeMode::transition) {
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const std::uint8_t v = labels.at(r, c, z);
          bool edge = false;
          for (long dr = -1; dr <= 1 && !edge; ++dr)
            for (long dc = -1; dc <= 1 && !edge; ++dc) {
              const long r2 = long(r) + dr, c2 = long(c) + dc;
              if (r2 < 0 || c2 < 0 || r2 >= long(h) || c2 >= long(w)) continue;
              edge = labels.at(std::size_t(r2), std::size_t(c2), z) != v;
            }
          edges.at(r, c, z) = edge ? 1 : 0;
        }
    return EdgeMap::from_voxels(std::move(edges));
  }
  const std::uint8_t max_label = labels.data.empty() ? 0 : *std::max_element(labels.data.begin(), labels.data.end());
  std::vector<double> mask(h * w);
  for (std::size_t z = 0; z < d; ++z) {
    for (std::uint8_t k = 1; k <= max_label; ++k) {
      bool any = false;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const bool in = labels.at(r, c, z) == k;
          mask[r * w + c] = in ? 1.0 : 0.0;
          any = any || in;
        }
      if (!any) continue;
      const std::vector<std::uint8_t> e = canny_2d(mask, h, w, canny);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          if (e[r * w + c]) edges.at(r, c, z) = 1;
    }
  }
  return EdgeMap::from_voxels(std::move(edges));
}

template <typename T>
EdgeSubnetParams<T> EdgeSubnetParams<T>::init(std::size_t e2_channels, std::size_t e5_channels,
                                              std::mt19937_64& rng) {
  EdgeSubnetParams p;
  p.adapt = ad::ConvUnitParams<T>::init(e5_channels, e2_channels, 1, rng);
  p.unit1 = ad::ConvUnitParams<T>::init(e2_channels, e2_channels, 3, rng);
  p.unit2 = ad::ConvUnitParams<T>::init(e2_channels, e2_channels, 3, rng);
  p.head_kernel = ad::uniform_tensor<T>({1, e2_channels, 1, 1, 1}, std::sqrt(6.0 / double(e2_channels)), rng);
  p.head_bias = BasicTensor<T>({1});
  return p;
}

template <typename T>
EdgeOutputs<T> edge_subnet_forward(Var<T> e2, Var<T> e5, const EdgeSubnetVars<T>& vars, const Triple& full_extent,
                                   ad::Mode mode, const ad::BatchNormConfig& bn) {
  const Dims5 s2 = dims5(e2.shape(), "edge subnet E2");
  const Dims5 s5 = dims5(e5.shape(), "edge subnet E5");
  if (s5.h * 8 != s2.h || s5.w * 8 != s2.w || s5.d * 8 != s2.d) {
    throw ShapeError("edge subnet: E5 spatial extent x8 must equal E2 extent, got " +
                     shape_string(e5.shape()) + " and " + shape_string(e2.shape()));
  }
  const ops::ConvGeometry same{{1, 1, 1}, {1, 1, 1}};
  Var<T> adapted = ad::conv_unit(e5, vars.adapt, {}, mode, bn);
  Var<T> merged = ad::add(e2, ad::resize_trilinear(adapted, {s2.h, s2.w, s2.d}));
  EdgeOutputs<T> out;
  out.features = ad::conv_unit(ad::conv_unit(merged, vars.unit1, same, mode, bn), vars.unit2, same, mode, bn);
  out.logits = ad::resize_trilinear(ad::conv3d(out.features, vars.head_kernel, vars.head_bias, {}), full_extent);
  return out;
}

template <typename T>
Var<T> weighted_bce(Var<T> logits, const BasicTensor<T>& reference) {
  ops::require_same_shape(logits.shape(), reference.shape(), "weighted_bce");
  const Dims5 s = dims5(logits.shape(), "weighted_bce");
  if (s.c != 1) throw ShapeError("weighted_bce expects one channel, got " + shape_string(logits.shape()));
  constexpr double kLo = 1e-7;
  constexpr double kHi = 1.0 - 1e-7;
  const std::size_t vox = s.spatial();
  const BasicTensor<T>& x = logits.value();
  BasicTensor<T> grad({s.n, 1, s.h, s.w, s.d});
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t off = n * vox;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < vox; ++i) {
      const T r = reference[off + i];
      if (r != T{0} && r != T{1}) throw std::invalid_argument("weighted_bce reference must be binary");
      pos += r == T{1};
    }
    const double alpha = double(vox - pos) / double(vox);
    double acc = 0;
    // d/dx of log p = 1 - p and of log(1 - p) = -p, zero where the clamp is active.
    for (std::size_t i = 0; i < vox; ++i) {
      const double raw = 1.0 / (1.0 + std::exp(-double(x[off + i])));
      const double p = std::clamp(raw, kLo, kHi);
      const bool clamped = raw < kLo || raw > kHi;
      double g;
      if (reference[off + i] == T{1}) {
        acc += alpha * std::log(p);
        g = clamped ? 0.0 : alpha * (1.0 - p);
      } else {
        acc += (1.0 - alpha) * std::log(1.0 - p);
        g = clamped ? 0.0 : -(1.0 - alpha) * p;
      }
      grad[off + i] = T(-g / double(vox) / double(s.n));
    }
    total += -acc / double(vox);
  }
  auto saved = std::make_shared<BasicTensor<T>>(std::move(grad));
  return logits.tape->record("weighted_bce", {logits.id}, BasicTensor<T>::scalar(T(total / double(s.n))),
                             [il = logits.id, saved](Tape<T>& t, std::size_t self) {
                               BasicTensor<T> g = *saved;
                               const T up = t.grad(self).item();
                               for (T& v : g.data()) v *= up;
                               t.accumulate(il, std::move(g));
                             });
}

template <typename T>
BasicTensor<T> edge_tensor(const std::vector<const EdgeMap*>& maps) {
  if (maps.empty()) throw ShapeError("edge_tensor of zero maps");
  const Triple e = maps.front()->voxels.extent;
  BasicTensor<T> out({maps.size(), 1, e[0], e[1], e[2]});
  const std::size_t vox = e[0] * e[1] * e[2];
  for (std::size_t n = 0; n < maps.size(); ++n) {
    if (maps[n]->voxels.extent != e) throw ShapeError("edge_tensor: edge maps differ in extent");
    for (std::size_t i = 0; i < vox; ++i) out[n * vox + i] = T(maps[n]->voxels.data[i]);
  }
  return out;
}

#define RFP_INSTANTIATE(T)                                                                             \
  template struct EdgeSubnetParams<T>;                                                                 \
  template EdgeOutputs<T> edge_subnet_forward<T>(Var<T>, Var<T>, const EdgeSubnetVars<T>&, const Triple&, \
                                                 ad::Mode, const ad::BatchNormConfig&);                \
  template Var<T> weighted_bce<T>(Var<T>, const BasicTensor<T>&);                                      \
  template BasicTensor<T> edge_tensor<T>(const std::vector<const EdgeMap*>&);

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::edge
