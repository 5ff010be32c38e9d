#pragma once

// Synthetic low-contrast multi-structure volumes, intensity preprocessing and
// training-time augmentation.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rfp/edge.hpp"
#include "rfp/volume.hpp"

namespace rfp::data {

struct SyntheticSpec {
  std::uint64_t seed = 1;
  Triple volume_shape{32, 32, 16};
  std::size_t num_structures = 3;  // K - 1
  /// Mean intensity step between structure k and k+1 (background is k = 0).
  double contrast_delta = 20.0;
  double noise_sigma = 20.0;
  /// Every structure after the first shares a face with an earlier one.
  bool adjacency = true;
  Spacing spacing{1.0, 1.0, 1.0};

  void validate() const;
};

inline constexpr double kBackgroundHu = -50.0;

struct VolumeSample {
  std::string id;
  std::uint64_t seed = 0;
  Tensor image;  // [H, W, D], HU-like intensities
  LabelVolume labels;
  Spacing spacing{1.0, 1.0, 1.0};
};

/// Seed of sample `index` derived from the corpus seed (splitmix64).
std::uint64_t sample_seed(std::uint64_t corpus_seed, std::size_t index);

/// One sample from its own seed. Structures are randomly rotated ellipsoids
/// painted over background only; throws std::runtime_error when they cannot
/// be placed within 1000 attempts.
VolumeSample generate_sample(const SyntheticSpec& spec, std::uint64_t seed, std::string id);

/// `count` samples with ids case_000, case_001, ...
std::vector<VolumeSample> gen_synthetic(const SyntheticSpec& spec, std::size_t count);

/// True when some voxel of class a has a six-connected neighbour of class b.
bool classes_touch(const LabelVolume& labels, std::uint8_t a, std::uint8_t b);

/// Clamp to [lo, hi], then zero mean / unit variance over the volume. A
/// (near-)constant volume, variance below 1e-8, maps to all zeros.
Tensor preprocess(const Tensor& volume, double clip_lo = -250.0, double clip_hi = 200.0);

struct AugmentParams {
  double flip_probability = 0.5;
  double max_rotation_deg = 15.0;
};

/// Rotation about the depth axis around the slice centre by `degrees`.
/// Images use bilinear sampling, labels nearest; both replicate the border.
Tensor rotate_image(const Tensor& image, double degrees);
LabelVolume rotate_labels(const LabelVolume& labels, double degrees);

Tensor flip_image(const Tensor& image, int axis);
LabelVolume flip_labels(const LabelVolume& labels, int axis);

struct TrainingSample {
  Tensor image;  // [H, W, D], preprocessed
  LabelVolume labels;
  edge::EdgeMap edges;
};

struct AugmentDraw {
  double degrees = 0;
  bool flip[3] = {false, false, false};
};

AugmentDraw draw_augment(std::mt19937_64& rng, const AugmentParams& params = {});

/// Rotation then flips; image, labels and edges move together.
TrainingSample apply_augment(const TrainingSample& s, const AugmentDraw& draw);

}  // namespace rfp::data
