#pragma once

// Named finite-difference checks grouped by scope, shared by the gradcheck
// subcommand and the acceptance binary.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rfp/gradcheck.hpp"

namespace rfp::check {

enum class Scope { op, module, network };

/// "op", "module" or "network"; throws std::invalid_argument otherwise.
Scope parse_scope(std::string_view s);

struct CaseResult {
  std::string name;
  ad::GradCheckReport report;
  double seconds = 0;
};

/// Case names available in a scope, in run order.
std::vector<std::string> case_names(Scope scope);

/// Runs every case of `scope` (or only `only` when non-empty; an unknown
/// name throws std::invalid_argument). Tolerance 1e-3 throughout; the
/// network case perturbs `network_entries` entries per tensor.
std::vector<CaseResult> run(Scope scope, std::uint64_t seed, std::string_view only = {},
                            std::size_t network_entries = 4);

}  // namespace rfp::check
