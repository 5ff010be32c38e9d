#include "rfp/tensor.hpp"

namespace rfp {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Dims5 dims5(const Shape& shape, const char* what) {
  if (shape.size() != 5) {
    throw ShapeError(std::string(what) + ": expected a 5-D [N, C, H, W, D] tensor, got " +
                     shape_string(shape));
  }
  return {shape[0], shape[1], shape[2], shape[3], shape[4]};
}

}  // namespace rfp
