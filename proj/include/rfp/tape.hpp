#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string_view>
#include <vector>

#include "rfp/tensor.hpp"

namespace rfp::ad {

template <typename T>
class Tape;

/// Handle to one node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode record. Nodes are appended in evaluation order, so every
/// node's inputs have strictly smaller ids and reverse id order is a valid
/// topological order for the backward sweep. A tape belongs to one thread.
template <typename T>
class Tape {
 public:
  /// Called during backward with the node's own id; pulls grad(self) and
  /// accumulates into its inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (a parameter or a checked input).
  Var<T> leaf(BasicTensor<T> value);
  /// Non-differentiable input.
  Var<T> constant(BasicTensor<T> value);
  Var<T> record(std::string_view op, std::vector<std::size_t> inputs, BasicTensor<T> value,
                BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and sweeps backwards. Throws ShapeError if
  /// root is not scalar-valued.
  void backward(Var<T> root);

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Gradient after backward(); all-zero for nodes the root does not reach.
  const BasicTensor<T>& grad(std::size_t id) const;
  const BasicTensor<T>& grad(Var<T> v) const { return grad(v.id); }
  void accumulate(std::size_t id, const BasicTensor<T>& g);
  void accumulate(std::size_t id, BasicTensor<T>&& g);

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    BasicTensor<T> value;
    mutable BasicTensor<T> grad;
    mutable bool grad_allocated = false;
    BackwardFn backward;
    bool requires_grad = false;
  };

  // deque keeps value references stable while nodes are appended.
  std::deque<Node> nodes_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

}  // namespace rfp::ad
