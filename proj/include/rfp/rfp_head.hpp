#pragma once

// Recurrent feature propagation head: each depth slice of the deepest
// encoder feature runs the DAG scans with its own weights, the direction
// outputs are fused and restacked along depth, added back to the input and
// projected to class logits.

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "rfp/autodiff.hpp"
#include "rfp/graph.hpp"

namespace rfp::head {

enum class Fusion { sum, concat };

std::string_view fusion_name(Fusion f);
Fusion parse_fusion(std::string_view s);

struct HeadConfig {
  std::size_t channels = 0;
  std::size_t classes = 0;
  Triple extent{};  // H, W, D of the input feature
  std::vector<graph::Direction> directions;
  graph::Neighborhood neighborhood = graph::Neighborhood::four;
  Fusion fusion = Fusion::sum;
};

template <typename T>
struct RfpHeadParams {
  BasicTensor<T> U;  // [D, R, C, C], R = number of directions
  BasicTensor<T> W;  // [D, R, C, C]
  BasicTensor<T> b;  // [D, R, C]
  BasicTensor<T> proj_kernel;  // [K, C, 1, 1, 1]
  BasicTensor<T> proj_bias;    // [K]
  BasicTensor<T> fuse_kernel;  // [C, R*C, 1, 1, 1], concat fusion only
  BasicTensor<T> fuse_bias;    // [C], concat fusion only

  /// U and W ~ U(-sqrt(3/C), sqrt(3/C)), W further divided by the largest
  /// predecessor count so summed recurrent input keeps its scale; b = 0.
  static RfpHeadParams init(const HeadConfig& cfg, std::mt19937_64& rng);

  graph::RfpWeights<T> weights(std::size_t slice, std::size_t direction) const;
};

/// One DAG layout per configured direction over the H x W slice grid.
std::vector<graph::DagLayout> build_layouts(const HeadConfig& cfg);

/// Differentiable slice-wise scan. x [N, C, H, W, D] -> [N, C, H, W, D] when
/// directions are summed, else [N, R*C, H, W, D] with direction blocks in
/// layout order.
template <typename T>
ad::Var<T> rfp_scan(ad::Var<T> x, ad::Var<T> U, ad::Var<T> W, ad::Var<T> b,
                    std::shared_ptr<const std::vector<graph::DagLayout>> layouts, bool sum_directions);

template <typename T>
struct RfpHeadVars {
  ad::Var<T> U, W, b, proj_kernel, proj_bias;
  ad::Var<T> fuse_kernel, fuse_bias;  // unused under sum fusion
};

template <typename T>
struct RfpOutputs {
  ad::Var<T> hidden;    // fused, restacked propagation output H
  ad::Var<T> enhanced;  // x + H
  ad::Var<T> logits;    // [N, K, H, W, D]
};

template <typename T>
RfpOutputs<T> rfp_forward(ad::Var<T> x, const RfpHeadVars<T>& vars,
                          std::shared_ptr<const std::vector<graph::DagLayout>> layouts, Fusion fusion);

/// Trilinear resize of head logits to the input volume resolution.
template <typename T>
ad::Var<T> logits_to_fullres(ad::Var<T> logits, const Triple& target);

enum class CostMode { slice_wise, volumetric_3d };

struct CostReport {
  CostMode mode = CostMode::slice_wise;
  std::uint64_t cell_updates = 0;
  std::uint64_t predecessor_visits = 0;
};

/// Operation counts for one forward pass over an H x W x D feature. The
/// slice-wise mode scans `directions` 2-D DAGs per slice; the volumetric mode
/// scans the 8 corner-origin DAGs of the 3-D grid, whose neighbourhood is the
/// 3-D analogue (six-connected for four, 26-connected for eight).
CostReport cost_count(std::size_t h, std::size_t w, std::size_t d, CostMode mode, std::size_t directions,
                      graph::Neighborhood neighborhood = graph::Neighborhood::four);

/// Trainable scalars held by the head.
std::size_t parameter_count(const HeadConfig& cfg);

}  // namespace rfp::head
