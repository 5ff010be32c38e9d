#pragma once

// Finite-difference check of the whole network objective in 64-bit mode.

#include <cstdint>
#include <vector>

#include "rfp/gradcheck.hpp"
#include "rfp/segnet.hpp"

namespace rfp::net {

/// 16x16x16 input, channels 4,8,8,8,8, K = 3, four DAGs, four ESCs.
NetworkConfig micro_config();

/// Total loss of a double network on a fixed random batch, as a function of
/// the trainable tensors (in store order).
struct NetworkObjective {
  ad::GradFn fn;
  std::vector<ad::NamedParam> params;
};

/// The returned objective owns its network and batch.
NetworkObjective make_network_objective(const NetworkConfig& cfg, std::size_t batch, std::uint64_t seed);

/// Builds a double network from `seed`, a random batch of `batch` samples
/// (normal intensities, random blocky labels, transition edges) and checks
/// d(total loss)/d(every trainable tensor) in train mode.
ad::GradCheckReport network_grad_check(const NetworkConfig& cfg, std::size_t batch, std::uint64_t seed,
                                       const ad::GradCheckOptions& opts);

}  // namespace rfp::net
