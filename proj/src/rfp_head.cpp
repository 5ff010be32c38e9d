#include "rfp/rfp_head.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rfp::head {

using ad::Tape;
using ad::Var;

std::string_view fusion_name(Fusion f) { return f == Fusion::sum ? "sum" : "concat"; }

Fusion parse_fusion(std::string_view s) {
  if (s == "sum") return Fusion::sum;
  if (s == "concat") return Fusion::concat;
  throw std::invalid_argument("unknown fusion mode '" + std::string(s) + "' (expected sum or concat)");
}

template <typename T>
RfpHeadParams<T> RfpHeadParams<T>::init(const HeadConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = cfg.channels;
  const std::size_t d = cfg.extent[2];
  const std::size_t r = cfg.directions.size();
  if (r == 0) throw std::invalid_argument("RFP head enabled with an empty direction set");
  const double bound = std::sqrt(3.0 / double(c));
  const double max_preds = cfg.neighborhood == graph::Neighborhood::four ? 2.0 : 4.0;
  RfpHeadParams p;
  p.U = ad::uniform_tensor<T>({d, r, c, c}, bound, rng);
  p.W = ad::uniform_tensor<T>({d, r, c, c}, bound / max_preds, rng);
  p.b = BasicTensor<T>({d, r, c});
  p.proj_kernel = ad::uniform_tensor<T>({cfg.classes, c, 1, 1, 1}, std::sqrt(6.0 / double(c)), rng);
  p.proj_bias = BasicTensor<T>({cfg.classes});
  if (cfg.fusion == Fusion::concat) {
    p.fuse_kernel = ad::uniform_tensor<T>({c, r * c, 1, 1, 1}, std::sqrt(6.0 / double(r * c)), rng);
    p.fuse_bias = BasicTensor<T>({c});
  }
  return p;
}

std::vector<graph::DagLayout> build_layouts(const HeadConfig& cfg) {
  graph::GridGraph g = graph::build_ucg(cfg.extent[0], cfg.extent[1], cfg.neighborhood);
  std::vector<graph::DagLayout> out;
  for (graph::Direction d : cfg.directions) out.push_back(graph::induce_dag(g, d));
  return out;
}

namespace {

template <typename T>
graph::RfpWeights<T> slice_weights(const BasicTensor<T>& U, const BasicTensor<T>& W, const BasicTensor<T>& b,
                                   std::size_t slice, std::size_t direction) {
  const std::size_t r = U.extent(1);
  const std::size_t c = U.extent(2);
  const std::size_t k = slice * r + direction;
  graph::RfpWeights<T> w{BasicTensor<T>({c, c}), BasicTensor<T>({c, c}), BasicTensor<T>({c})};
  std::copy_n(U.ptr() + k * c * c, c * c, w.U.ptr());
  std::copy_n(W.ptr() + k * c * c, c * c, w.W.ptr());
  std::copy_n(b.ptr() + k * c, c, w.b.ptr());
  return w;
}

// Adds [H, W, C] into channels [c0, c0+C) of y [N, Cy, H, W, D] at (n, z).
template <typename T>
void scatter_add(BasicTensor<T>& y, std::size_t cy, const BasicTensor<T>& m, const Dims5& s, std::size_t n,
                 std::size_t z, std::size_t c0) {
  const std::size_t hw = s.h * s.w;
  for (std::size_t c = 0; c < s.c; ++c) {
    T* dst = y.ptr() + (n * cy + c0 + c) * hw * s.d + z;
    for (std::size_t v = 0; v < hw; ++v) dst[v * s.d] += m[v * s.c + c];
  }
}

// Channels [c0, c0+C) of y [N, Cy, H, W, D] at (n, z) -> [H, W, C].
template <typename T>
BasicTensor<T> gather_channels(const BasicTensor<T>& y, std::size_t cy, const Dims5& s, std::size_t n,
                               std::size_t z, std::size_t c0) {
  BasicTensor<T> out({s.h, s.w, s.c});
  const std::size_t hw = s.h * s.w;
  for (std::size_t c = 0; c < s.c; ++c) {
    const T* src = y.ptr() + (n * cy + c0 + c) * hw * s.d + z;
    for (std::size_t v = 0; v < hw; ++v) out[v * s.c + c] = src[v * s.d];
  }
  return out;
}

}  // namespace

template <typename T>
graph::RfpWeights<T> RfpHeadParams<T>::weights(std::size_t slice, std::size_t direction) const {
  return slice_weights(U, W, b, slice, direction);
}

template <typename T>
Var<T> rfp_scan(Var<T> x, Var<T> U, Var<T> W, Var<T> b,
                std::shared_ptr<const std::vector<graph::DagLayout>> layouts, bool sum_directions) {
  const Dims5 s = dims5(x.shape(), "rfp_scan");
  const std::size_t r = layouts->size();
  if (r == 0) throw std::invalid_argument("rfp_scan with an empty direction set");
  if (U.shape() != Shape{s.d, r, s.c, s.c} || W.shape() != U.shape() || b.shape() != Shape{s.d, r, s.c}) {
    throw ShapeError("rfp_scan weights U " + shape_string(U.shape()) + " / b " + shape_string(b.shape()) +
                     " do not fit input " + shape_string(x.shape()) + " with " + std::to_string(r) +
                     " directions");
  }
  for (const auto& l : *layouts) {
    if (l.height != s.h || l.width != s.w) throw ShapeError("rfp_scan layout grid does not match input H, W");
  }
  // Per-(sample, slice, direction) hidden maps are kept for the backward pass.
  auto hidden = std::make_shared<std::vector<BasicTensor<T>>>();
  hidden->reserve(s.n * s.d * r);
  const std::size_t cy = sum_directions ? s.c : r * s.c;
  BasicTensor<T> y({s.n, cy, s.h, s.w, s.d});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t z = 0; z < s.d; ++z) {
      const BasicTensor<T> f = gather_channels(x.value(), s.c, s, n, z, 0);
      for (std::size_t dir = 0; dir < r; ++dir) {
        BasicTensor<T> h = graph::dag_scan_forward(
            f, (*layouts)[dir], slice_weights(U.value(), W.value(), b.value(), z, dir));
        scatter_add(y, cy, h, s, n, z, sum_directions ? 0 : dir * s.c);
        hidden->push_back(std::move(h));
      }
    }
  return x.tape->record(
      "rfp_scan", {x.id, U.id, W.id, b.id}, std::move(y),
      [ix = x.id, iu = U.id, iw = W.id, ib = b.id, layouts, hidden, sum_directions, cy](
          Tape<T>& t, std::size_t self) {
        const BasicTensor<T>& xv = t.value(ix);
        const Dims5 s = dims5(xv.shape(), "rfp_scan");
        const std::size_t r = layouts->size();
        const BasicTensor<T>& gy = t.grad(self);
        BasicTensor<T> gx(xv.shape());
        BasicTensor<T> gU(t.value(iu).shape());
        BasicTensor<T> gW(gU.shape());
        BasicTensor<T> gb(t.value(ib).shape());
        const std::size_t cc = s.c * s.c;
        std::size_t k = 0;
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t z = 0; z < s.d; ++z) {
            const BasicTensor<T> f = gather_channels(xv, s.c, s, n, z, 0);
            BasicTensor<T> gf({s.h, s.w, s.c});
            for (std::size_t dir = 0; dir < r; ++dir, ++k) {
              const BasicTensor<T> gh = gather_channels(gy, cy, s, n, z, sum_directions ? 0 : dir * s.c);
              graph::ScanGrads<T> g = graph::dag_scan_backward(
                  f, (*layouts)[dir], slice_weights(t.value(iu), t.value(iw), t.value(ib), z, dir), (*hidden)[k], gh);
              for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += g.features[i];
              const std::size_t mat = (z * r + dir) * cc;
              for (std::size_t i = 0; i < cc; ++i) {
                gU[mat + i] += g.U[i];
                gW[mat + i] += g.W[i];
              }
              for (std::size_t i = 0; i < s.c; ++i) gb[(z * r + dir) * s.c + i] += g.b[i];
            }
            scatter_add(gx, s.c, gf, s, n, z, 0);
          }
        if (t.requires_grad(ix)) t.accumulate(ix, std::move(gx));
        t.accumulate(iu, std::move(gU));
        t.accumulate(iw, std::move(gW));
        t.accumulate(ib, std::move(gb));
      });
}

template <typename T>
RfpOutputs<T> rfp_forward(Var<T> x, const RfpHeadVars<T>& vars,
                          std::shared_ptr<const std::vector<graph::DagLayout>> layouts, Fusion fusion) {
  RfpOutputs<T> out;
  if (fusion == Fusion::sum) {
    out.hidden = rfp_scan(x, vars.U, vars.W, vars.b, layouts, true);
  } else {
    Var<T> stacked = rfp_scan(x, vars.U, vars.W, vars.b, layouts, false);
    out.hidden = ad::conv3d(stacked, vars.fuse_kernel, vars.fuse_bias, {});
  }
  out.enhanced = ad::add(x, out.hidden);
  out.logits = ad::conv3d(out.enhanced, vars.proj_kernel, vars.proj_bias, {});
  return out;
}

template <typename T>
Var<T> logits_to_fullres(Var<T> logits, const Triple& target) {
  return ad::resize_trilinear(logits, target);
}

namespace {

// Undirected 3-D grid edges for the neighbour offsets with at most
// `max_nonzero` nonzero components.
std::uint64_t grid3_edges(std::size_t h, std::size_t w, std::size_t d, int max_nonzero) {
  std::uint64_t total = 0;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) {
        const int nz = (a != 0) + (b != 0) + (c != 0);
        if (nz == 0 || nz > max_nonzero) continue;
        // Count each undirected offset once: first nonzero component positive.
        const int first = a != 0 ? a : (b != 0 ? b : c);
        if (first < 0) continue;
        const std::size_t ext[3] = {h, w, d};
        const int off[3] = {a, b, c};
        std::uint64_t count = 1;
        for (int k = 0; k < 3; ++k) {
          const std::size_t o = static_cast<std::size_t>(std::abs(off[k]));
          count *= ext[k] > o ? ext[k] - o : 0;
        }
        total += count;
      }
  return total;
}

}  // namespace

CostReport cost_count(std::size_t h, std::size_t w, std::size_t d, CostMode mode, std::size_t directions,
                      graph::Neighborhood neighborhood) {
  if (h == 0 || w == 0 || d == 0) throw ShapeError("cost_count needs positive extents");
  CostReport rep;
  rep.mode = mode;
  const bool eight = neighborhood == graph::Neighborhood::eight;
  // Every scan order orients every grid edge, so each DAG holds all edges.
  if (mode == CostMode::slice_wise) {
    const std::uint64_t edges2 = graph::build_ucg(h, w, neighborhood).edges.size();
    rep.cell_updates = std::uint64_t(directions) * h * w * d;
    rep.predecessor_visits = std::uint64_t(directions) * d * edges2;
  } else {
    rep.cell_updates = 8ull * h * w * d;
    rep.predecessor_visits = 8ull * grid3_edges(h, w, d, eight ? 3 : 1);
  }
  return rep;
}

std::size_t parameter_count(const HeadConfig& cfg) {
  const std::size_t c = cfg.channels;
  const std::size_t r = cfg.directions.size();
  if (r == 0) return 0;
  std::size_t n = cfg.extent[2] * r * (2 * c * c + c) + cfg.classes * c + cfg.classes;
  if (cfg.fusion == Fusion::concat) n += c * r * c + c;
  return n;
}

#define RFP_INSTANTIATE(T)                                                                            \
  template struct RfpHeadParams<T>;                                                                   \
  template Var<T> rfp_scan<T>(Var<T>, Var<T>, Var<T>, Var<T>,                                         \
                              std::shared_ptr<const std::vector<graph::DagLayout>>, bool);            \
  template RfpOutputs<T> rfp_forward<T>(Var<T>, const RfpHeadVars<T>&,                                \
                                        std::shared_ptr<const std::vector<graph::DagLayout>>, Fusion); \
  template Var<T> logits_to_fullres<T>(Var<T>, const Triple&);

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::head
