#include "rfp/data.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rfp::data {

void SyntheticSpec::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (volume_shape[a] < 8) throw std::invalid_argument("synthetic volume extent must be at least 8 on every axis");
  }
  if (num_structures == 0 || num_structures > 254) {
    throw std::invalid_argument("num_structures must be in 1..254");
  }
  if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be non-negative");
  for (double s : spacing) {
    if (!(s > 0)) throw std::invalid_argument("voxel spacing must be positive");
  }
}

std::uint64_t sample_seed(std::uint64_t corpus_seed, std::size_t index) {
  std::uint64_t z = corpus_seed + 0x9e3779b97f4a7c15ULL * (std::uint64_t(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

struct Ellipsoid {
  double center[3];
  double radii[3];
  double rot[3][3];  // rows: body axes in volume coordinates

  bool contains(double r, double c, double z) const {
    const double p[3] = {r - center[0], c - center[1], z - center[2]};
    double s = 0;
    for (int i = 0; i < 3; ++i) {
      const double q = rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
      s += (q / radii[i]) * (q / radii[i]);
    }
    return s <= 1.0;
  }

  // Bounding radius along each volume axis.
  double extent(int axis) const {
    double e = 0;
    for (int i = 0; i < 3; ++i) e += (rot[i][axis] * radii[i]) * (rot[i][axis] * radii[i]);
    return std::sqrt(e);
  }
};

// Rotation from yaw about depth and a small tilt of the depth axis.
void random_rotation(std::mt19937_64& rng, double out[3][3]) {
  std::uniform_real_distribution<double> yaw(0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> tilt(-0.35, 0.35);
  const double a = yaw(rng), b = tilt(rng);
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b);
  const double rz[3][3] = {{ca, -sa, 0}, {sa, ca, 0}, {0, 0, 1}};
  const double rx[3][3] = {{1, 0, 0}, {0, cb, -sb}, {0, sb, cb}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      out[i][j] = 0;
      for (int k = 0; k < 3; ++k) out[i][j] += rx[i][k] * rz[k][j];
    }
}

}  // namespace

bool classes_touch(const LabelVolume& labels, std::uint8_t a, std::uint8_t b) {
  const auto [h, w, d] = labels.extent;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t z = 0; z < d; ++z) {
        if (labels.at(r, c, z) != a) continue;
        if ((r + 1 < h && labels.at(r + 1, c, z) == b) || (r > 0 && labels.at(r - 1, c, z) == b) ||
            (c + 1 < w && labels.at(r, c + 1, z) == b) || (c > 0 && labels.at(r, c - 1, z) == b) ||
            (z + 1 < d && labels.at(r, c, z + 1) == b) || (z > 0 && labels.at(r, c, z - 1) == b))
          return true;
      }
  return false;
}

VolumeSample generate_sample(const SyntheticSpec& spec, std::uint64_t seed, std::string id) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const Triple e = spec.volume_shape;
  LabelVolume labels(e);
  std::vector<Ellipsoid> placed;

  // Radii scale with the volume so the structures occupy a similar fraction
  // at any extent.
  std::uniform_real_distribution<double> rad_hw(0.17 * double(std::min(e[0], e[1])),
                                                0.27 * double(std::min(e[0], e[1])));
  std::uniform_real_distribution<double> rad_d(0.2 * double(e[2]), 0.3 * double(e[2]));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;

  int attempts = 0;
  for (std::size_t k = 1; k <= spec.num_structures; ++k) {
    for (;;) {
      if (++attempts > 1000) {
        throw std::runtime_error("could not place structure " + std::to_string(k) + " of " +
                                 std::to_string(spec.num_structures) + " within 1000 attempts");
      }
      Ellipsoid el;
      el.radii[0] = rad_hw(rng);
      el.radii[1] = rad_hw(rng);
      el.radii[2] = rad_d(rng);
      random_rotation(rng, el.rot);
      if (placed.empty() || !spec.adjacency) {
        for (int a = 0; a < 3; ++a) el.center[a] = unit(rng) * double(e[a] - 1);
      } else {
        // Next to a random earlier structure, roughly along a random direction.
        const Ellipsoid& host = placed[std::uniform_int_distribution<std::size_t>(0, placed.size() - 1)(rng)];
        double dir[3] = {normal(rng), normal(rng), 0.3 * normal(rng)};
        const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
        for (int a = 0; a < 3; ++a) {
          const double reach = 0.8 * (host.extent(a) + el.extent(a));
          el.center[a] = host.center[a] + dir[a] / n * reach;
        }
      }
      bool fits = true;
      for (int a = 0; a < 3; ++a) {
        if (el.center[a] - el.extent(a) < 0.5 || el.center[a] + el.extent(a) > double(e[a]) - 1.5) fits = false;
      }
      if (!fits) continue;

      LabelVolume trial = labels;
      std::size_t painted = 0, inside = 0;
      for (std::size_t r = 0; r < e[0]; ++r)
        for (std::size_t c = 0; c < e[1]; ++c)
          for (std::size_t z = 0; z < e[2]; ++z) {
            if (!el.contains(double(r), double(c), double(z))) continue;
            ++inside;
            if (trial.at(r, c, z) == 0) {
              trial.at(r, c, z) = static_cast<std::uint8_t>(k);
              ++painted;
            }
          }
      // Keep most of each structure visible and reasonably sized.
      if (inside < 27 || double(painted) < 0.6 * double(inside)) continue;
      if (spec.adjacency && k > 1) {
        bool touches = false;
        for (std::size_t j = 1; j < k && !touches; ++j) {
          touches = classes_touch(trial, static_cast<std::uint8_t>(k), static_cast<std::uint8_t>(j));
        }
        if (!touches) continue;
      }
      labels = std::move(trial);
      placed.push_back(el);
      break;
    }
  }

  VolumeSample s;
  s.id = std::move(id);
  s.seed = seed;
  s.spacing = spec.spacing;
  s.image = Tensor({e[0], e[1], e[2]});
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double v = kBackgroundHu + double(labels.data[i]) * spec.contrast_delta;
    if (spec.noise_sigma > 0) v += noise(rng);
    s.image[i] = static_cast<float>(v);
  }
  s.labels = std::move(labels);
  return s;
}

std::vector<VolumeSample> gen_synthetic(const SyntheticSpec& spec, std::size_t count) {
  std::vector<VolumeSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%03zu", i);
    out.push_back(generate_sample(spec, sample_seed(spec.seed, i), id));
  }
  return out;
}

Tensor preprocess(const Tensor& volume, double clip_lo, double clip_hi) {
  if (clip_lo > clip_hi) throw std::invalid_argument("clip window is inverted");
  Tensor out(volume.shape());
  const std::size_t n = volume.size();
  std::vector<double> v(n);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::clamp(double(volume[i]), clip_lo, clip_hi);
    sum += v[i];
  }
  const double mean = sum / double(n);
  double sq = 0;
  for (double x : v) sq += (x - mean) * (x - mean);
  const double var = sq / double(n);
  if (var < 1e-8) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>((v[i] - mean) * inv);
  return out;
}

namespace {

Triple extent_of(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("expected a [H, W, D] volume, got " + shape_string(t.shape()));
  return {t.extent(0), t.extent(1), t.extent(2)};
}

// Source position of output (r, c) under rotation by `degrees` about the
// slice centre (inverse mapping).
struct InPlaneMap {
  double cos_t, sin_t, cr, cc;
  InPlaneMap(double degrees, const Triple& e)
      : cos_t(std::cos(degrees * std::numbers::pi / 180.0)),
        sin_t(std::sin(degrees * std::numbers::pi / 180.0)),
        cr(0.5 * double(e[0] - 1)),
        cc(0.5 * double(e[1] - 1)) {}
  void source(std::size_t r, std::size_t c, double& sr, double& sc) const {
    const double dr = double(r) - cr, dc = double(c) - cc;
    sr = cos_t * dr + sin_t * dc + cr;
    sc = -sin_t * dr + cos_t * dc + cc;
  }
};

}  // namespace

Tensor rotate_image(const Tensor& image, double degrees) {
  const Triple e = extent_of(image);
  if (degrees == 0.0) return image;
  const InPlaneMap m(degrees, e);
  Tensor out(image.shape());
  for (std::size_t r = 0; r < e[0]; ++r)
    for (std::size_t c = 0; c < e[1]; ++c) {
      double sr, sc;
      m.source(r, c, sr, sc);
      sr = std::clamp(sr, 0.0, double(e[0] - 1));
      sc = std::clamp(sc, 0.0, double(e[1] - 1));
      const std::size_t r0 = static_cast<std::size_t>(std::floor(sr));
      const std::size_t c0 = static_cast<std::size_t>(std::floor(sc));
      const std::size_t r1 = std::min(r0 + 1, e[0] - 1), c1 = std::min(c0 + 1, e[1] - 1);
      const double fr = sr - double(r0), fc = sc - double(c0);
      for (std::size_t z = 0; z < e[2]; ++z) {
        auto at = [&](std::size_t rr, std::size_t cc) { return double(image[(rr * e[1] + cc) * e[2] + z]); };
        const double v = (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c1)) + fr * ((1 - fc) * at(r1, c0) + fc * at(r1, c1));
        out[(r * e[1] + c) * e[2] + z] = static_cast<float>(v);
      }
    }
  return out;
}

LabelVolume rotate_labels(const LabelVolume& labels, double degrees) {
  const Triple e = labels.extent;
  if (degrees == 0.0) return labels;
  const InPlaneMap m(degrees, e);
  LabelVolume out(e);
  for (std::size_t r = 0; r < e[0]; ++r)
    for (std::size_t c = 0; c < e[1]; ++c) {
      double sr, sc;
      m.source(r, c, sr, sc);
      const auto rr = static_cast<std::size_t>(std::clamp(std::round(sr), 0.0, double(e[0] - 1)));
      const auto cc = static_cast<std::size_t>(std::clamp(std::round(sc), 0.0, double(e[1] - 1)));
      for (std::size_t z = 0; z < e[2]; ++z) out.at(r, c, z) = labels.at(rr, cc, z);
    }
  return out;
}

namespace {

template <typename Get, typename Put>
void flip_loop(const Triple& e, int axis, Get get, Put put) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("flip axis must be 0, 1 or 2");
  for (std::size_t r = 0; r < e[0]; ++r)
    for (std::size_t c = 0; c < e[1]; ++c)
      for (std::size_t z = 0; z < e[2]; ++z) {
        std::size_t s[3] = {r, c, z};
        s[axis] = e[axis] - 1 - s[axis];
        put((r * e[1] + c) * e[2] + z, get((s[0] * e[1] + s[1]) * e[2] + s[2]));
      }
}

}  // namespace

Tensor flip_image(const Tensor& image, int axis) {
  const Triple e = extent_of(image);
  Tensor out(image.shape());
  flip_loop(e, axis, [&](std::size_t i) { return image[i]; }, [&](std::size_t i, float v) { out[i] = v; });
  return out;
}

LabelVolume flip_labels(const LabelVolume& labels, int axis) {
  LabelVolume out(labels.extent);
  flip_loop(labels.extent, axis, [&](std::size_t i) { return labels.data[i]; },
            [&](std::size_t i, std::uint8_t v) { out.data[i] = v; });
  return out;
}

AugmentDraw draw_augment(std::mt19937_64& rng, const AugmentParams& params) {
  AugmentDraw d;
  std::uniform_real_distribution<double> angle(-params.max_rotation_deg, params.max_rotation_deg);
  std::bernoulli_distribution flip(params.flip_probability);
  d.degrees = params.max_rotation_deg > 0 ? angle(rng) : 0.0;
  for (bool& f : d.flip) f = flip(rng);
  return d;
}

TrainingSample apply_augment(const TrainingSample& s, const AugmentDraw& draw) {
  TrainingSample out{rotate_image(s.image, draw.degrees), rotate_labels(s.labels, draw.degrees),
                     {}};
  LabelVolume edges = rotate_labels(s.edges.voxels, draw.degrees);
  for (int a = 0; a < 3; ++a) {
    if (!draw.flip[a]) continue;
    out.image = flip_image(out.image, a);
    out.labels = flip_labels(out.labels, a);
    edges = flip_labels(edges, a);
  }
  out.edges = edge::EdgeMap::from_voxels(std::move(edges));
  return out;
}

}  // namespace rfp::data
