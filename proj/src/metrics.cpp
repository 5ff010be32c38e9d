#include "rfp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rfp::metrics {

namespace {

void require_same_extent(const LabelVolume& a, const LabelVolume& b, const char* what) {
  if (a.extent != b.extent) {
    throw ShapeError(std::string(what) + ": volumes differ in extent [" + std::to_string(a.extent[0]) + ", " +
                     std::to_string(a.extent[1]) + ", " + std::to_string(a.extent[2]) + "] vs [" +
                     std::to_string(b.extent[0]) + ", " + std::to_string(b.extent[1]) + ", " +
                     std::to_string(b.extent[2]) + "]");
  }
}

// 1-D lower envelope of parabolas: d[i] = min_j f[j] + ((i - j) * s)^2.
void envelope_1d(const double* f, std::size_t n, std::size_t stride, double s, double* out, std::vector<double>& scratch_f,
                 std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  scratch_f.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch_f[i] = f[i * stride];
  v.assign(n, 0);
  z.assign(n + 1, 0);
  const double s2 = s * s;
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (scratch_f[q] < kInf) {
      first = q;
      break;
    }
  }
  if (first == n) {
    for (std::size_t i = 0; i < n; ++i) out[i * stride] = kInf;
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(scratch_f[q] < kInf)) continue;
    const double fq = scratch_f[q] + s2 * double(q) * double(q);
    for (;;) {
      const std::size_t p = v[k];
      const double fp = scratch_f[p] + s2 * double(p) * double(p);
      const double inter = (fq - fp) / (2.0 * s2 * (double(q) - double(p)));
      if (inter <= z[k] && k > 0) {
        --k;
        continue;
      }
      if (inter <= z[k]) {
        // k == 0: the new parabola dominates everywhere.
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
        break;
      }
      ++k;
      v[k] = q;
      z[k] = inter;
      z[k + 1] = kInf;
      break;
    }
  }
  k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (z[k + 1] < double(i)) ++k;
    const double d = (double(i) - double(v[k])) * s;
    out[i * stride] = scratch_f[v[k]] + d * d;
  }
}

}  // namespace

std::optional<double> dsc(const LabelVolume& pred, const LabelVolume& ref, std::uint8_t k) {
  require_same_extent(pred, ref, "dsc");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pa = pred.data[i] == k;
    const bool pb = ref.data[i] == k;
    a += pa;
    b += pb;
    both += pa && pb;
  }
  if (a + b == 0) return std::nullopt;
  return 2.0 * double(both) / double(a + b);
}

std::vector<std::size_t> surface_voxels(const LabelVolume& mask) {
  const auto [h, w, d] = mask.extent;
  std::vector<std::size_t> out;
  auto fg = [&](std::size_t r, std::size_t c, std::size_t z) { return mask.at(r, c, z) != 0; };
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t z = 0; z < d; ++z) {
        if (!fg(r, c, z)) continue;
        const bool surface = r == 0 || r + 1 == h || c == 0 || c + 1 == w || z == 0 || z + 1 == d ||
                             !fg(r - 1, c, z) || !fg(r + 1, c, z) || !fg(r, c - 1, z) || !fg(r, c + 1, z) ||
                             !fg(r, c, z - 1) || !fg(r, c, z + 1);
        if (surface) out.push_back(mask.index(r, c, z));
      }
  return out;
}

std::vector<double> squared_distance_transform(const LabelVolume& seeds, const Spacing& spacing) {
  const auto [h, w, d] = seeds.extent;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> a(seeds.size()), b(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) a[i] = seeds.data[i] ? 0.0 : kInf;
  std::vector<double> sf, z;
  std::vector<std::size_t> v;
  // D axis (contiguous), then W, then H.
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t base = (r * w + c) * d;
      envelope_1d(a.data() + base, d, 1, spacing[2], b.data() + base, sf, v, z);
    }
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t base = r * w * d + k;
      envelope_1d(b.data() + base, w, d, spacing[1], a.data() + base, sf, v, z);
    }
  for (std::size_t c = 0; c < w; ++c)
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t base = c * d + k;
      envelope_1d(a.data() + base, h, w * d, spacing[0], b.data() + base, sf, v, z);
    }
  return b;
}

std::optional<std::vector<double>> surface_distances(const LabelVolume& a, const LabelVolume& b,
                                                     const Spacing& spacing) {
  require_same_extent(a, b, "surface_distances");
  const std::vector<std::size_t> sa = surface_voxels(a);
  const std::vector<std::size_t> sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) return std::nullopt;
  auto seed_volume = [&](const std::vector<std::size_t>& s) {
    LabelVolume out(a.extent);
    for (std::size_t i : s) out.data[i] = 1;
    return out;
  };
  const std::vector<double> to_b = squared_distance_transform(seed_volume(sb), spacing);
  const std::vector<double> to_a = squared_distance_transform(seed_volume(sa), spacing);
  std::vector<double> out;
  out.reserve(sa.size() + sb.size());
  for (std::size_t i : sa) out.push_back(std::sqrt(to_b[i]));
  for (std::size_t i : sb) out.push_back(std::sqrt(to_a[i]));
  return out;
}

double assd(const std::vector<double>& distances) {
  if (distances.empty()) throw std::invalid_argument("assd of an empty distance set");
  return std::accumulate(distances.begin(), distances.end(), 0.0) / double(distances.size());
}

double hd95(const std::vector<double>& distances) {
  if (distances.empty()) throw std::invalid_argument("hd95 of an empty distance set");
  std::vector<double> s = distances;
  std::sort(s.begin(), s.end());
  const double pos = 0.95 * double(s.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - double(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

LabelVolume class_mask(const LabelVolume& labels, std::uint8_t k) {
  LabelVolume out(labels.extent);
  for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = labels.data[i] == k;
  return out;
}

CaseMetrics evaluate_case(const std::string& id, const LabelVolume& pred, const LabelVolume& ref,
                          std::size_t num_classes, const Spacing& spacing) {
  require_same_extent(pred, ref, "evaluate_case");
  CaseMetrics out{id, {}};
  for (std::size_t k = 1; k < num_classes; ++k) {
    const auto kk = static_cast<std::uint8_t>(k);
    ClassMetrics m;
    m.dsc = dsc(pred, ref, kk);
    if (auto d = surface_distances(class_mask(pred, kk), class_mask(ref, kk), spacing)) {
      m.assd = assd(*d);
      m.hd95 = hd95(*d);
    }
    out.classes.push_back(m);
  }
  return out;
}

Summary summarize_values(const std::vector<std::optional<double>>& values) {
  Summary s;
  std::vector<double> present;
  for (const auto& v : values) {
    if (v) present.push_back(*v);
    else ++s.missing;
  }
  s.count = present.size();
  if (present.empty()) return s;
  s.mean = std::accumulate(present.begin(), present.end(), 0.0) / double(present.size());
  if (present.size() > 1) {
    double sq = 0;
    for (double v : present) sq += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(sq / double(present.size() - 1));
  }
  return s;
}

MetricsReport summarize(std::vector<CaseMetrics> cases) {
  MetricsReport r;
  std::size_t classes = 0;
  for (const auto& c : cases) classes = std::max(classes, c.classes.size());
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<std::optional<double>> d, a, h;
    for (const auto& c : cases) {
      if (k >= c.classes.size()) continue;
      d.push_back(c.classes[k].dsc);
      a.push_back(c.classes[k].assd);
      h.push_back(c.classes[k].hd95);
    }
    r.dsc.push_back(summarize_values(d));
    r.assd.push_back(summarize_values(a));
    r.hd95.push_back(summarize_values(h));
  }
  r.cases = std::move(cases);
  return r;
}

double MetricsReport::mean_foreground_dsc() const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& s : dsc) {
    if (s.count == 0) continue;
    sum += s.mean;
    ++n;
  }
  return n == 0 ? 0.0 : sum / double(n);
}

namespace {

std::string fmt(const std::optional<double>& v, int precision) {
  if (!v) return "missing";
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << *v;
  return o.str();
}

std::string fmt_summary(const Summary& s, int precision) {
  if (s.count == 0) return "missing";
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << s.mean << " +- " << s.sd;
  return o.str();
}

}  // namespace

std::string format_table(const MetricsReport& report) {
  std::ostringstream o;
  o << std::left << std::setw(16) << "case" << std::setw(7) << "class" << std::setw(20) << "DSC" << std::setw(20)
    << "ASSD(mm)" << "HD95(mm)\n";
  for (const auto& c : report.cases) {
    for (std::size_t k = 0; k < c.classes.size(); ++k) {
      const ClassMetrics& m = c.classes[k];
      o << std::setw(16) << c.id << std::setw(7) << (k + 1) << std::setw(20) << fmt(m.dsc, 4) << std::setw(20)
        << fmt(m.assd, 3) << fmt(m.hd95, 3) << "\n";
    }
  }
  for (std::size_t k = 0; k < report.dsc.size(); ++k) {
    o << std::setw(16) << "mean+-sd" << std::setw(7) << (k + 1) << std::setw(20) << fmt_summary(report.dsc[k], 4)
      << std::setw(20) << fmt_summary(report.assd[k], 3) << fmt_summary(report.hd95[k], 3) << "\n";
  }
  return o.str();
}

std::string format_records(const MetricsReport& report) {
  std::ostringstream o;
  o << std::setprecision(17);
  for (const auto& c : report.cases) {
    for (std::size_t k = 0; k < c.classes.size(); ++k) {
      const ClassMetrics& m = c.classes[k];
      o << "record=case id=" << c.id << " class=" << (k + 1) << " dsc=" << fmt(m.dsc, 17)
        << " assd=" << fmt(m.assd, 17) << " hd95=" << fmt(m.hd95, 17) << "\n";
    }
  }
  for (std::size_t k = 0; k < report.dsc.size(); ++k) {
    auto put = [&](const char* name, const Summary& s) {
      o << " " << name << "_mean=" << (s.count ? fmt(s.mean, 17) : "missing") << " " << name
        << "_sd=" << (s.count ? fmt(s.sd, 17) : "missing") << " " << name << "_n=" << s.count;
    };
    o << "record=summary class=" << (k + 1);
    put("dsc", report.dsc[k]);
    put("assd", report.assd[k]);
    put("hd95", report.hd95[k]);
    o << "\n";
  }
  return o.str();
}

}  // namespace rfp::metrics
