#include "rfp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rfp::ad {

namespace {

double evaluate(const GradFn& fn, const std::vector<NamedParam>& params) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(params.size());
  for (const NamedParam& p : params) leaves.push_back(tape.leaf(p.value));
  return fn(tape, leaves).value().item();
}

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t max_entries, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_entries == 0 || size <= max_entries) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const ParamCheck& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

GradCheckReport grad_check(const GradFn& fn, const std::vector<NamedParam>& params,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  std::vector<Tensor64> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const NamedParam& p : params) leaves.push_back(tape.leaf(p.value));
    Var<double> root = fn(tape, leaves);
    if (!std::isfinite(root.value().item())) {
      report.passed = false;
      report.failure = "objective is not finite at the unperturbed point";
      return report;
    }
    tape.backward(root);
    for (const Var<double>& v : leaves) analytic.push_back(tape.grad(v));
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<NamedParam> work = params;
  for (std::size_t p = 0; p < work.size(); ++p) {
    ParamCheck check;
    check.name = work[p].name;
    for (std::size_t i : pick_entries(work[p].value.size(), opts.max_entries, rng)) {
      const double orig = work[p].value[i];
      work[p].value[i] = orig + opts.step;
      const double plus = evaluate(fn, work);
      work[p].value[i] = orig - opts.step;
      const double minus = evaluate(fn, work);
      work[p].value[i] = orig;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double a = analytic[p][i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.passed = false;
        report.failure = "non-finite gradient at " + check.name + "[" + std::to_string(i) + "]";
        report.params.push_back(check);
        return report;
      }
      const double err = relative_error(a, numeric, opts.abs_floor);
      if (err > check.max_rel_error || check.checked == 0) {
        check.max_rel_error = std::max(check.max_rel_error, err);
        if (err >= check.max_rel_error) {
          check.worst_index = i;
          check.analytic = a;
          check.numeric = numeric;
        }
      }
      ++check.checked;
    }
    if (check.max_rel_error > opts.tol) report.passed = false;
    report.params.push_back(check);
  }
  return report;
}

}  // namespace rfp::ad
