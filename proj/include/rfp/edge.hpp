#pragma once

// Reference edge maps from label volumes, the edge sub-network fed by the
// second and fifth encoder features, and the class-balanced edge loss.

#include <random>
#include <string_view>

#include "rfp/autodiff.hpp"
#include "rfp/volume.hpp"

namespace rfp::edge {

/// Binary edge volume; 1 marks an edge voxel (P+), 0 background (P-).
struct EdgeMap {
  LabelVolume voxels;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  static EdgeMap from_voxels(LabelVolume v);
  /// |P-| / (|P+| + |P-|)
  double alpha() const;

  bool operator==(const EdgeMap&) const = default;
};

enum class EdgeMode { canny, transition };

std::string_view edge_mode_name(EdgeMode m);
EdgeMode parse_edge_mode(std::string_view s);

/// Thresholds are fractions of the largest gradient magnitude in the slice.
struct CannyParams {
  double gaussian_sigma = 1.0;
  double low_threshold = 0.1;
  double high_threshold = 0.2;
  /// Non-maximum suppression keeps a pixel whose magnitude is within this
  /// fraction of its larger neighbour along the gradient. A step between
  /// two pixel centres gives both pixels nearly equal magnitude.
  double nms_tolerance = 0.05;
};

/// Works slice by slice along D. transition: a voxel is an edge when any of
/// its 8 in-slice neighbours carries a different label. canny: 2-D Canny on
/// each foreground class mask, unioned over classes.
EdgeMap generate_reference_edges(const LabelVolume& labels, EdgeMode mode, const CannyParams& canny = {});

/// 2-D Canny on one [H, W] slice of intensities (row-major). Returns a
/// 0/1 mask of the same size.
std::vector<std::uint8_t> canny_2d(const std::vector<double>& image, std::size_t h, std::size_t w,
                                   const CannyParams& params);

template <typename T>
struct EdgeSubnetParams {
  ad::ConvUnitParams<T> adapt;  // 1x1x1, E5 channels -> E2 channels
  ad::ConvUnitParams<T> unit1;  // 3x3x3
  ad::ConvUnitParams<T> unit2;  // 3x3x3
  BasicTensor<T> head_kernel;   // [1, C2, 1, 1, 1]
  BasicTensor<T> head_bias;     // [1]

  static EdgeSubnetParams init(std::size_t e2_channels, std::size_t e5_channels, std::mt19937_64& rng);
};

template <typename T>
struct EdgeSubnetVars {
  ad::ConvUnitVars<T> adapt, unit1, unit2;
  ad::Var<T> head_kernel, head_bias;
};

template <typename T>
struct EdgeOutputs {
  ad::Var<T> features;  // F_edge at E2 resolution
  ad::Var<T> logits;    // [N, 1, full resolution]
};

/// F_edge = unit2(unit1(E2 + upsample8(adapt(E5)))); logits = 1x1x1 conv of
/// F_edge resized to `full_extent`. Throws ShapeError unless 8x the E5
/// extent equals the E2 extent.
template <typename T>
EdgeOutputs<T> edge_subnet_forward(ad::Var<T> e2, ad::Var<T> e5, const EdgeSubnetVars<T>& vars,
                                   const Triple& full_extent, ad::Mode mode, const ad::BatchNormConfig& bn);

/// Class-balanced binary cross-entropy with per-sample alpha = |P-|/N.
/// logits and reference are [N, 1, H, W, D]; reference holds 0/1. Returns
/// the mean over samples of
///   -(1/N) [ alpha sum_{P+} log p + (1 - alpha) sum_{P-} log(1 - p) ],
/// p = sigmoid(logit) clamped to [1e-7, 1 - 1e-7].
template <typename T>
ad::Var<T> weighted_bce(ad::Var<T> logits, const BasicTensor<T>& reference);

template <typename T>
BasicTensor<T> edge_tensor(const std::vector<const EdgeMap*>& maps);

}  // namespace rfp::edge
