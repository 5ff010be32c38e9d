#pragma once

// Grid graphs over one H x W feature slice, their four scan-induced DAG
// orientations, and the recurrent propagation
//   h(v) = ReLU(U f(v) + W * sum_{p in pred(v)} h(p) + b)
// evaluated vertex by vertex in scan order.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "rfp/tensor.hpp"

namespace rfp::graph {

enum class Neighborhood { four, eight };
enum class Direction { dr, dl, ur, ul };

std::string_view direction_name(Direction d);
std::string_view neighborhood_name(Neighborhood n);
Neighborhood parse_neighborhood(std::string_view s);

/// Scan directions for a DAG-count ablation: 1 -> {dr}, 2 -> {dr, ul},
/// 3 -> {dr, ul, dl}, 4 -> all four.
std::vector<Direction> directions_for_count(std::size_t count);

struct GridGraph {
  std::size_t height = 0;
  std::size_t width = 0;
  Neighborhood neighborhood = Neighborhood::four;
  /// Undirected edges as (lower id, higher id), vertex id = row * width + col.
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

GridGraph build_ucg(std::size_t height, std::size_t width, Neighborhood neighborhood);

struct DagLayout {
  Direction direction = Direction::dr;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> scan_order;
  /// Per vertex id, its direct predecessors ordered by scan position.
  std::vector<std::vector<std::size_t>> predecessors;

  std::size_t edge_count() const;
};

/// Orients every UCG edge from the earlier to the later vertex of the
/// direction's scan order.
DagLayout induce_dag(const GridGraph& graph, Direction direction);

/// True when every predecessor precedes its vertex in scan_order.
bool is_topologically_ordered(const DagLayout& layout);

template <typename T>
struct RfpWeights {
  BasicTensor<T> U;  // [C, C]
  BasicTensor<T> W;  // [C, C]
  BasicTensor<T> b;  // [C]

  std::size_t channels() const { return b.size(); }
};

/// features [H, W, C] -> hidden [H, W, C]. Scan origins use a zero
/// predecessor sum. Throws NumericalError on non-finite input.
template <typename T>
BasicTensor<T> dag_scan_forward(const BasicTensor<T>& features, const DagLayout& layout,
                                const RfpWeights<T>& weights);

template <typename T>
struct ScanGrads {
  BasicTensor<T> features;
  BasicTensor<T> U;
  BasicTensor<T> W;
  BasicTensor<T> b;
};

template <typename T>
ScanGrads<T> dag_scan_backward(const BasicTensor<T>& features, const DagLayout& layout,
                               const RfpWeights<T>& weights, const BasicTensor<T>& hidden,
                               const BasicTensor<T>& grad_hidden);

/// Elementwise sum of same-shaped direction outputs.
template <typename T>
BasicTensor<T> fuse_directions(const std::vector<const BasicTensor<T>*>& hidden_maps);

/// Process-wide counters bumped by dag_scan_forward: one cell update per
/// vertex evaluated and one predecessor visit per summed predecessor.
struct ScanCounters {
  std::uint64_t cell_updates = 0;
  std::uint64_t predecessor_visits = 0;
};
ScanCounters scan_counters();
void reset_scan_counters();

}  // namespace rfp::graph
