#pragma once

// Overlap and surface-distance metrics on label volumes.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rfp/volume.hpp"

namespace rfp::metrics {

/// 2|A n B| / (|A| + |B|) for class k; nullopt when both masks are empty.
std::optional<double> dsc(const LabelVolume& pred, const LabelVolume& ref, std::uint8_t k);

/// Flat indices of foreground voxels with at least one six-connected
/// background neighbour; outside the volume counts as background.
std::vector<std::size_t> surface_voxels(const LabelVolume& mask);

/// Squared Euclidean distance (mm^2) from every voxel to the nearest
/// non-zero voxel of `seeds`, separable lower-envelope transform. Voxels are
/// +inf when there are no seeds.
std::vector<double> squared_distance_transform(const LabelVolume& seeds, const Spacing& spacing);

/// Nearest-surface distances from each surface voxel of `a` to the surface
/// of `b`, followed by those from `b` to `a`. nullopt if either mask is empty.
std::optional<std::vector<double>> surface_distances(const LabelVolume& a, const LabelVolume& b,
                                                     const Spacing& spacing);

/// Arithmetic mean. Throws std::invalid_argument on an empty multiset.
double assd(const std::vector<double>& distances);
/// 95th percentile, linear interpolation between order statistics at
/// rank 0.95 * (n - 1). Throws std::invalid_argument on an empty multiset.
double hd95(const std::vector<double>& distances);

/// Binary mask of class k.
LabelVolume class_mask(const LabelVolume& labels, std::uint8_t k);

/// Metrics for one foreground class of one case. A missing value means the
/// metric is undefined (vacuous DSC, or an empty mask for the distances).
struct ClassMetrics {
  std::optional<double> dsc;
  std::optional<double> assd;
  std::optional<double> hd95;
};

struct CaseMetrics {
  std::string id;
  std::vector<ClassMetrics> classes;  // index 0 = class 1
};

CaseMetrics evaluate_case(const std::string& id, const LabelVolume& pred, const LabelVolume& ref,
                          std::size_t num_classes, const Spacing& spacing);

struct Summary {
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
  std::size_t missing = 0;
};

/// Corpus statistics per foreground class; missing values are excluded.
struct MetricsReport {
  std::vector<CaseMetrics> cases;
  std::vector<Summary> dsc, assd, hd95;  // index 0 = class 1

  /// Mean over classes of the per-class mean DSC (classes with no values skipped).
  double mean_foreground_dsc() const;
};

MetricsReport summarize(std::vector<CaseMetrics> cases);

Summary summarize_values(const std::vector<std::optional<double>>& values);

/// Aligned text table: one row per case and class, then mean +- sd rows.
std::string format_table(const MetricsReport& report);

/// key=value records, one per case and class plus one summary per class.
std::string format_records(const MetricsReport& report);

}  // namespace rfp::metrics
