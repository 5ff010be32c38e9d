#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rfp/tensor.hpp"

namespace rfp {

/// Integer volume [H, W, D], D innermost. Used for labels, masks and edges.
struct LabelVolume {
  Triple extent{};
  std::vector<std::uint8_t> data;

  LabelVolume() = default;
  explicit LabelVolume(Triple e, std::uint8_t fill = 0) : extent(e), data(e[0] * e[1] * e[2], fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t r, std::size_t c, std::size_t z) const {
    return (r * extent[1] + c) * extent[2] + z;
  }
  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t z) { return data[index(r, c, z)]; }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t z) const { return data[index(r, c, z)]; }

  bool operator==(const LabelVolume&) const = default;
};

/// Millimetres per voxel along H, W, D.
using Spacing = std::array<double, 3>;

}  // namespace rfp
