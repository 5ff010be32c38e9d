#include "rfp/tape.hpp"

#include <string>

namespace rfp::ad {

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, std::vector<std::size_t> inputs, BasicTensor<T> value,
                       BackwardFn backward) {
  Node n;
  n.op = op;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) {
      throw std::logic_error("tape node '" + std::string(op) + "' references future node " +
                             std::to_string(in));
    }
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
const BasicTensor<T>& Tape<T>::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.grad_allocated) {
    n.grad = BasicTensor<T>(n.value.shape());
    n.grad_allocated = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const BasicTensor<T>& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_string(g.shape()) + " vs value shape " +
                     shape_string(n.value.shape()) + " at node '" + std::string(n.op) + "'");
  }
  if (!n.grad_allocated) {
    n.grad = g;
    n.grad_allocated = true;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, BasicTensor<T>&& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (!n.grad_allocated && g.shape() == n.value.shape()) {
    n.grad = std::move(g);
    n.grad_allocated = true;
    return;
  }
  accumulate(id, static_cast<const BasicTensor<T>&>(g));
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw std::logic_error("backward root belongs to another tape");
  const Node& r = nodes_.at(root.id);
  if (r.value.size() != 1) {
    throw ShapeError("backward root must be scalar-valued, got shape " + shape_string(r.value.shape()));
  }
  for (Node& n : nodes_) {
    n.grad_allocated = false;
    n.grad = BasicTensor<T>();
  }
  BasicTensor<T> seed(r.value.shape(), T{1});
  nodes_[root.id].grad = std::move(seed);
  nodes_[root.id].grad_allocated = true;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad_allocated || !n.backward) continue;
    n.backward(*this, id);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace rfp::ad
