#include "rfp/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rfp/kernels.hpp"

namespace rfp::graph {

namespace {

std::atomic<std::uint64_t> g_cells{0};
std::atomic<std::uint64_t> g_preds{0};

std::size_t scan_position(Direction d, std::size_t r, std::size_t c, std::size_t h, std::size_t w) {
  switch (d) {
    case Direction::dr: return r * w + c;
    case Direction::dl: return r * w + (w - 1 - c);
    case Direction::ur: return (h - 1 - r) * w + c;
    case Direction::ul: return (h - 1 - r) * w + (w - 1 - c);
  }
  return 0;
}

template <typename T>
void check_scan_shapes(const BasicTensor<T>& features, const DagLayout& layout, const RfpWeights<T>& weights) {
  const std::size_t c = weights.channels();
  if (features.rank() != 3 || features.extent(0) != layout.height || features.extent(1) != layout.width) {
    throw ShapeError("scan features " + shape_string(features.shape()) + " do not match a " +
                     std::to_string(layout.height) + "x" + std::to_string(layout.width) + " layout");
  }
  if (features.extent(2) != c || weights.U.shape() != Shape{c, c} || weights.W.shape() != Shape{c, c}) {
    throw ShapeError("scan weights U " + shape_string(weights.U.shape()) + ", W " +
                     shape_string(weights.W.shape()) + " vs feature channels " +
                     std::to_string(features.extent(2)));
  }
}

// [rows, cols] -> [cols, rows]
template <typename T>
std::vector<T> transpose(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

}  // namespace

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::dr: return "dr";
    case Direction::dl: return "dl";
    case Direction::ur: return "ur";
    case Direction::ul: return "ul";
  }
  return "?";
}

std::string_view neighborhood_name(Neighborhood n) { return n == Neighborhood::four ? "four" : "eight"; }

Neighborhood parse_neighborhood(std::string_view s) {
  if (s == "four" || s == "4") return Neighborhood::four;
  if (s == "eight" || s == "8") return Neighborhood::eight;
  throw std::invalid_argument("unknown neighborhood '" + std::string(s) + "' (expected four or eight)");
}

std::vector<Direction> directions_for_count(std::size_t count) {
  static const Direction order[] = {Direction::dr, Direction::ul, Direction::dl, Direction::ur};
  if (count > 4) throw std::invalid_argument("dag count " + std::to_string(count) + " exceeds 4");
  return {order, order + count};
}

GridGraph build_ucg(std::size_t height, std::size_t width, Neighborhood neighborhood) {
  if (height == 0 || width == 0) throw ShapeError("grid graph needs positive extents");
  GridGraph g{height, width, neighborhood, {}};
  auto id = [width](std::size_t r, std::size_t c) { return r * width + c; };
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c + 1 < width) g.edges.emplace_back(id(r, c), id(r, c + 1));
      if (r + 1 < height) g.edges.emplace_back(id(r, c), id(r + 1, c));
      if (neighborhood == Neighborhood::eight && r + 1 < height) {
        if (c + 1 < width) g.edges.emplace_back(id(r, c), id(r + 1, c + 1));
        if (c > 0) g.edges.emplace_back(id(r, c), id(r + 1, c - 1));
      }
    }
  }
  return g;
}

std::size_t DagLayout::edge_count() const {
  std::size_t n = 0;
  for (const auto& p : predecessors) n += p.size();
  return n;
}

DagLayout induce_dag(const GridGraph& graph, Direction direction) {
  const std::size_t h = graph.height;
  const std::size_t w = graph.width;
  DagLayout layout;
  layout.direction = direction;
  layout.height = h;
  layout.width = w;
  layout.scan_order.resize(h * w);
  std::vector<std::size_t> pos(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t p = scan_position(direction, r, c, h, w);
      pos[r * w + c] = p;
      layout.scan_order[p] = r * w + c;
    }
  layout.predecessors.assign(h * w, {});
  for (const auto& [a, b] : graph.edges) {
    if (pos[a] < pos[b]) {
      layout.predecessors[b].push_back(a);
    } else {
      layout.predecessors[a].push_back(b);
    }
  }
  // Ordering by scan position makes the summation order a property of the
  // direction, so mirrored scans round identically.
  for (auto& preds : layout.predecessors) {
    std::sort(preds.begin(), preds.end(), [&](std::size_t x, std::size_t y) { return pos[x] < pos[y]; });
  }
  return layout;
}

bool is_topologically_ordered(const DagLayout& layout) {
  std::vector<std::size_t> pos(layout.scan_order.size());
  for (std::size_t i = 0; i < layout.scan_order.size(); ++i) pos[layout.scan_order[i]] = i;
  for (std::size_t v = 0; v < layout.predecessors.size(); ++v)
    for (std::size_t p : layout.predecessors[v])
      if (pos[p] >= pos[v]) return false;
  return true;
}

template <typename T>
BasicTensor<T> dag_scan_forward(const BasicTensor<T>& features, const DagLayout& layout,
                                const RfpWeights<T>& weights) {
  check_scan_shapes(features, layout, weights);
  for (T v : features.data()) {
    if (!std::isfinite(v)) throw NumericalError("non-finite value in scan features");
  }
  const std::size_t c = weights.channels();
  const std::size_t n = layout.height * layout.width;
  // Input transform for all vertices at once: UF[v] = U f(v).
  BasicTensor<T> hidden({layout.height, layout.width, c});
  kernels::gemm_nt<T>(n, c, c, features.ptr(), c, weights.U.ptr(), c, hidden.ptr(), c, false);
  std::vector<T> hsum(c);
  std::uint64_t visits = 0;
  for (std::size_t v : layout.scan_order) {
    T* hv = hidden.ptr() + v * c;
    const auto& preds = layout.predecessors[v];
    if (!preds.empty()) {
      std::fill(hsum.begin(), hsum.end(), T{0});
      for (std::size_t p : preds) {
        const T* hp = hidden.ptr() + p * c;
        for (std::size_t j = 0; j < c; ++j) hsum[j] += hp[j];
      }
      visits += preds.size();
      for (std::size_t i = 0; i < c; ++i) hv[i] += kernels::dot<T>(c, weights.W.ptr() + i * c, hsum.data());
    }
    for (std::size_t i = 0; i < c; ++i) {
      const T z = hv[i] + weights.b[i];
      hv[i] = z < T{0} ? T{0} : z;
    }
  }
  g_cells.fetch_add(n, std::memory_order_relaxed);
  g_preds.fetch_add(visits, std::memory_order_relaxed);
  return hidden;
}

template <typename T>
ScanGrads<T> dag_scan_backward(const BasicTensor<T>& features, const DagLayout& layout,
                               const RfpWeights<T>& weights, const BasicTensor<T>& hidden,
                               const BasicTensor<T>& grad_hidden) {
  check_scan_shapes(features, layout, weights);
  if (hidden.shape() != features.shape() || grad_hidden.shape() != features.shape()) {
    throw ShapeError("scan backward: hidden " + shape_string(hidden.shape()) + " / grad " +
                     shape_string(grad_hidden.shape()) + " vs features " + shape_string(features.shape()));
  }
  const std::size_t c = weights.channels();
  const std::size_t n = layout.height * layout.width;
  // gz holds dL/dz per vertex; gh starts as the external gradient and
  // collects successor contributions as the reverse sweep reaches each vertex.
  BasicTensor<T> gh = grad_hidden;
  std::vector<T> gz(n * c, T{0});
  std::vector<T> hsum_all(n * c, T{0});
  std::vector<T> ghsum(c);
  for (std::size_t k = n; k-- > 0;) {
    const std::size_t v = layout.scan_order[k];
    const T* hv = hidden.ptr() + v * c;
    T* gzv = gz.data() + v * c;
    for (std::size_t i = 0; i < c; ++i) gzv[i] = hv[i] > T{0} ? gh[v * c + i] : T{0};
    const auto& preds = layout.predecessors[v];
    if (preds.empty()) continue;
    T* hs = hsum_all.data() + v * c;
    for (std::size_t p : preds)
      for (std::size_t j = 0; j < c; ++j) hs[j] += hidden[p * c + j];
    std::fill(ghsum.begin(), ghsum.end(), T{0});
    for (std::size_t i = 0; i < c; ++i) kernels::axpy<T>(c, gzv[i], weights.W.ptr() + i * c, ghsum.data());
    for (std::size_t p : preds)
      for (std::size_t j = 0; j < c; ++j) gh[p * c + j] += ghsum[j];
  }
  ScanGrads<T> g;
  g.features = BasicTensor<T>(features.shape());
  kernels::gemm_nn<T>(n, c, c, gz.data(), c, weights.U.ptr(), c, g.features.ptr(), c, false);
  const std::vector<T> gz_t = transpose(gz.data(), n, c);
  const std::vector<T> f_t = transpose(features.ptr(), n, c);
  const std::vector<T> hs_t = transpose(hsum_all.data(), n, c);
  g.U = BasicTensor<T>({c, c});
  g.W = BasicTensor<T>({c, c});
  kernels::gemm_nt<T>(c, c, n, gz_t.data(), n, f_t.data(), n, g.U.ptr(), c, false);
  kernels::gemm_nt<T>(c, c, n, gz_t.data(), n, hs_t.data(), n, g.W.ptr(), c, false);
  g.b = BasicTensor<T>({c});
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t i = 0; i < c; ++i) g.b[i] += gz[v * c + i];
  return g;
}

template <typename T>
BasicTensor<T> fuse_directions(const std::vector<const BasicTensor<T>*>& hidden_maps) {
  if (hidden_maps.empty()) throw ShapeError("fuse_directions of zero maps");
  BasicTensor<T> out = *hidden_maps.front();
  for (std::size_t m = 1; m < hidden_maps.size(); ++m) {
    if (hidden_maps[m]->shape() != out.shape()) {
      throw ShapeError("fuse_directions: shape mismatch " + shape_string(out.shape()) + " vs " +
                       shape_string(hidden_maps[m]->shape()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*hidden_maps[m])[i];
  }
  return out;
}

ScanCounters scan_counters() { return {g_cells.load(), g_preds.load()}; }

void reset_scan_counters() {
  g_cells.store(0);
  g_preds.store(0);
}

#define RFP_INSTANTIATE(T)                                                                           \
  template BasicTensor<T> dag_scan_forward<T>(const BasicTensor<T>&, const DagLayout&,               \
                                              const RfpWeights<T>&);                                 \
  template ScanGrads<T> dag_scan_backward<T>(const BasicTensor<T>&, const DagLayout&,                \
                                             const RfpWeights<T>&, const BasicTensor<T>&,            \
                                             const BasicTensor<T>&);                                 \
  template BasicTensor<T> fuse_directions<T>(const std::vector<const BasicTensor<T>*>&);

RFP_INSTANTIATE(float)
RFP_INSTANTIATE(double)
#undef RFP_INSTANTIATE

}  // namespace rfp::graph
