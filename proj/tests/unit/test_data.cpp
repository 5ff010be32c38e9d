#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "rfp/data.hpp"
#include "rfp/metrics.hpp"

namespace rfp::data {
namespace {

// Per-voxel intensity classifier: nearest class mean.
LabelVolume threshold_oracle(const VolumeSample& s, const SyntheticSpec& spec) {
  LabelVolume out(s.labels.extent);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = (double(s.image[i]) - kBackgroundHu) / spec.contrast_delta;
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(t), 0L, long(spec.num_structures)));
  }
  return out;
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SyntheticSpec spec;
  spec.seed = 5;
  auto a = gen_synthetic(spec, 3);
  auto b = gen_synthetic(spec, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].labels, b[i].labels);
    EXPECT_EQ(a[i].id, b[i].id);
  }
  EXPECT_NE(a[0].labels, a[1].labels);
  EXPECT_EQ(a[2].id, "case_002");
}

TEST(Synthetic, AllStructuresPresentAndAdjacent) {
  SyntheticSpec spec;
  spec.seed = 11;
  for (const auto& s : gen_synthetic(spec, 30)) {
    std::map<int, std::size_t> hist;
    for (auto l : s.labels.data) ++hist[l];
    ASSERT_EQ(hist.size(), 4u) << s.id;
    bool any_touch = false;
    for (std::uint8_t a = 1; a <= 3; ++a)
      for (std::uint8_t b = a + 1; b <= 3; ++b) any_touch = any_touch || classes_touch(s.labels, a, b);
    EXPECT_TRUE(any_touch) << s.id;
    // Structures stay off the border.
    const auto [h, w, d] = s.labels.extent;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        EXPECT_EQ(s.labels.at(r, c, 0), 0);
        EXPECT_EQ(s.labels.at(r, c, d - 1), 0);
      }
  }
}

TEST(Synthetic, NoiselessHighContrastIsThresholdSeparable) {
  SyntheticSpec spec;
  spec.noise_sigma = 0;
  spec.contrast_delta = 100;
  for (const auto& s : gen_synthetic(spec, 5)) EXPECT_EQ(threshold_oracle(s, spec), s.labels);
}

// Low contrast: the per-voxel classifier fails on voxels next to a boundary,
// so context is needed.
TEST(Synthetic, LowContrastDefeatsPerVoxelClassifierAtBoundaries) {
  SyntheticSpec spec;
  spec.contrast_delta = 5;
  spec.noise_sigma = 20;
  std::size_t agree = 0, pred_n = 0, ref_n = 0;
  for (const auto& s : gen_synthetic(spec, 10)) {
    const LabelVolume pred = threshold_oracle(s, spec);
    const auto [h, w, d] = s.labels.extent;
    for (std::size_t r = 1; r + 1 < h; ++r)
      for (std::size_t c = 1; c + 1 < w; ++c)
        for (std::size_t z = 1; z + 1 < d; ++z) {
          const std::uint8_t l = s.labels.at(r, c, z);
          const bool boundary = s.labels.at(r - 1, c, z) != l || s.labels.at(r + 1, c, z) != l ||
                                s.labels.at(r, c - 1, z) != l || s.labels.at(r, c + 1, z) != l ||
                                s.labels.at(r, c, z - 1) != l || s.labels.at(r, c, z + 1) != l;
          if (!boundary) continue;
          const std::uint8_t p = pred.at(r, c, z);
          // Foreground DSC over boundary voxels, classes pooled.
          if (l != 0) ++ref_n;
          if (p != 0) ++pred_n;
          if (l != 0 && p == l) ++agree;
        }
  }
  const double boundary_dsc = 2.0 * double(agree) / double(pred_n + ref_n);
  EXPECT_LT(boundary_dsc, 0.8);
}

TEST(Synthetic, ImpossiblePlacementThrows) {
  SyntheticSpec spec;
  spec.volume_shape = {8, 8, 8};
  spec.num_structures = 60;
  EXPECT_THROW(gen_synthetic(spec, 1), std::runtime_error);
}

TEST(Synthetic, InvalidSpecRejected) {
  SyntheticSpec spec;
  spec.volume_shape = {4, 32, 32};
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = {};
  spec.noise_sigma = -1;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Preprocess, ConstantAboveWindowIsZero) {
  Tensor out = preprocess(Tensor({4, 4, 4}, 300.0f));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, StandardisedInputUnchanged) {
  Tensor x({2, 2, 2}, std::vector<float>{-1, 1, -1, 1, -1, 1, -1, 1});
  Tensor y = preprocess(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-6);
}

TEST(Preprocess, RampHandFormula) {
  // 81 voxels from -400 to 400 in steps of 10; clip to [-250, 200].
  Tensor x({81, 1, 1});
  for (int i = 0; i < 81; ++i) x[i] = float(-400 + 10 * i);
  double sum = 0, sq = 0;
  std::vector<double> c(81);
  for (int i = 0; i < 81; ++i) {
    c[i] = std::clamp(-400.0 + 10 * i, -250.0, 200.0);
    sum += c[i];
  }
  const double mean = sum / 81;
  for (double v : c) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / 81);
  Tensor y = preprocess(x);
  for (int i : {0, 10, 40, 55, 80}) EXPECT_NEAR(y[i], (c[i] - mean) / sd, 1e-5) << i;
  double m = 0, v = 0;
  for (float t : y.data()) m += t;
  m /= 81;
  for (float t : y.data()) v += (t - m) * (t - m);
  EXPECT_NEAR(m, 0.0, 1e-5);
  EXPECT_NEAR(v / 81, 1.0, 1e-4);
}

TEST(Preprocess, OutputBoundedByClipWindow) {
  SyntheticSpec spec;
  const auto s = generate_sample(spec, 3, "x");
  const Tensor y = preprocess(s.image);
  const float lo = *std::min_element(y.data().begin(), y.data().end());
  const float hi = *std::max_element(y.data().begin(), y.data().end());
  // With unit variance no value can sit further than sqrt(n) from the mean.
  EXPECT_LE(hi - lo, 2 * std::sqrt(float(y.size())));
}

TrainingSample sample_with_edges(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.volume_shape = {16, 16, 8};
  auto s = generate_sample(spec, seed, "x");
  return {preprocess(s.image), s.labels, edge::generate_reference_edges(s.labels, edge::EdgeMode::transition)};
}

TEST(Augment, IdentityDraw) {
  const TrainingSample s = sample_with_edges(2);
  const TrainingSample out = apply_augment(s, AugmentDraw{});
  EXPECT_EQ(out.image, s.image);
  EXPECT_EQ(out.labels, s.labels);
  EXPECT_EQ(out.edges, s.edges);
}

TEST(Augment, DoubleFlipIsIdentity) {
  const TrainingSample s = sample_with_edges(3);
  for (int axis = 0; axis < 3; ++axis) {
    EXPECT_EQ(flip_image(flip_image(s.image, axis), axis), s.image);
    EXPECT_EQ(flip_labels(flip_labels(s.labels, axis), axis), s.labels);
  }
  EXPECT_THROW(flip_labels(s.labels, 3), std::invalid_argument);
}

TEST(Augment, QuarterTurnPreservesLabelHistogram) {
  LabelVolume l({12, 12, 3});
  for (std::size_t i = 0; i < l.size(); ++i) l.data[i] = static_cast<std::uint8_t>((i * 7919) % 5);
  const LabelVolume r = rotate_labels(l, 90.0);
  std::map<int, int> a, b;
  for (auto v : l.data) ++a[v];
  for (auto v : r.data) ++b[v];
  EXPECT_EQ(a, b);
  // Four quarter turns return the original.
  EXPECT_EQ(rotate_labels(rotate_labels(rotate_labels(r, 90.0), 90.0), 90.0), l);
}

TEST(Augment, RotationMovesImageAndLabelsTogether) {
  const TrainingSample s = sample_with_edges(4);
  AugmentDraw draw;
  draw.degrees = 12.0;
  draw.flip[1] = true;
  const TrainingSample out = apply_augment(s, draw);
  // Nearest-neighbour labels of the rotated volume equal the rotated labels.
  EXPECT_EQ(out.labels, flip_labels(rotate_labels(s.labels, 12.0), 1));
  EXPECT_EQ(out.edges.voxels, flip_labels(rotate_labels(s.edges.voxels, 12.0), 1));
  EXPECT_EQ(out.edges.positives + out.edges.negatives, out.labels.size());
  // Mean intensity inside each class stays ordered after resampling.
  std::vector<double> sum(4, 0), n(4, 0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    sum[out.labels.data[i]] += out.image[i];
    n[out.labels.data[i]] += 1;
  }
  for (int k = 1; k < 4; ++k) EXPECT_GT(sum[k] / n[k], sum[k - 1] / n[k - 1]) << k;
}

TEST(Augment, DrawsStayInRange) {
  std::mt19937_64 rng(1);
  int flips = 0;
  for (int i = 0; i < 400; ++i) {
    AugmentDraw d = draw_augment(rng);
    EXPECT_LE(std::abs(d.degrees), 15.0);
    flips += d.flip[0];
  }
  EXPECT_GT(flips, 150);
  EXPECT_LT(flips, 250);
}

}  // namespace
}  // namespace rfp::data
