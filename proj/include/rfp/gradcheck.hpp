#pragma once

// Central finite-difference verification of tape gradients, 64-bit only.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rfp/tape.hpp"

namespace rfp::ad {

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-3;
  /// Entries perturbed per parameter tensor; 0 checks every entry.
  std::size_t max_entries = 0;
  /// Lower bound on the relative-error denominator. Raise it above the
  /// finite-difference roundoff level when the objective is large compared
  /// to some gradients (exactly-zero bias gradients ahead of batch norm).
  double abs_floor = 1e-8;
  std::uint64_t seed = 0;
};

struct NamedParam {
  std::string name;
  Tensor64 value;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool passed = true;
  /// Set when a NaN/Inf showed up: which parameter and entry.
  std::string failure;

  double max_rel_error() const;
};

/// Builds the scalar objective on a fresh tape from one leaf per parameter,
/// in the order given.
using GradFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Relative error |a - n| / max(|a|, |n|, abs_floor) per checked entry.
GradCheckReport grad_check(const GradFn& fn, const std::vector<NamedParam>& params,
                           const GradCheckOptions& opts = {});

double relative_error(double analytic, double numeric, double abs_floor = 1e-8);

}  // namespace rfp::ad
