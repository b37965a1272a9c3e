#include "exposura/tape.hpp"

#include <optional>

#include "exposura/error.hpp"

namespace exposura {

namespace {

thread_local std::string g_gradient_fault;

}  // namespace

ScopedGradientFault::ScopedGradientFault(std::string op) : previous_(std::move(g_gradient_fault)) {
  g_gradient_fault = std::move(op);
}

ScopedGradientFault::~ScopedGradientFault() { g_gradient_fault = std::move(previous_); }

template <typename T>
const Tensor<T>* Gradients<T>::find(const Tensor<T>& leaf) const {
  if (leaf.node() == kNoNode) return nullptr;
  auto it = grads_.find(leaf.node());
  return it == grads_.end() ? nullptr : &it->second;
}

template <typename T>
const Tensor<T>& Gradients<T>::at(const Tensor<T>& leaf) const {
  const Tensor<T>* g = find(leaf);
  if (g == nullptr) throw Error("no gradient recorded for node " + std::to_string(leaf.node()));
  return *g;
}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& value) {
  if (!value.defined()) throw ShapeError("cannot watch an undefined tensor");
  if (value.tape() != nullptr) throw Error("tensor is already on a tape");
  Tensor<T> out = value;
  out.tape_ = this;
  out.node_ = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{"leaf", {}, nullptr, value.shape()});
  return out;
}

template <typename T>
Tensor<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::span<const Tensor<T>* const> inputs,
                          BackwardFn fn) {
  Node node{std::string(op), {}, std::move(fn), value.shape()};
  node.inputs.reserve(inputs.size());
  for (const Tensor<T>* in : inputs) {
    if (in == nullptr || in->tape() == nullptr) {
      node.inputs.push_back(kNoNode);
      continue;
    }
    if (in->tape() != this) throw Error("op '" + node.op + "' mixes tensors from different tapes");
    node.inputs.push_back(in->node());
  }
  value.tape_ = this;
  value.node_ = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  return value;
}

template <typename T>
Gradients<T> Tape<T>::backward(const Tensor<T>& loss) const {
  if (loss.tape() != this || loss.node() == kNoNode) throw Error("backward: loss is not a node of this tape");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));

  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.node())] = Tensor<T>(loss.shape(), T(1));

  Gradients<T> result;
  std::vector<Tensor<T>> grad_in;
  for (NodeId id = loss.node(); id >= 0; --id) {
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (!slot) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.fn) {
      result.grads_.emplace(id, std::move(*slot));
      slot.reset();
      continue;
    }
    const std::size_t n_in = node.inputs.size();
    bool needs[8] = {};
    if (n_in > 8) throw Error("op '" + node.op + "' has too many inputs");
    for (std::size_t i = 0; i < n_in; ++i) needs[i] = node.inputs[i] != kNoNode;
    grad_in.assign(n_in, Tensor<T>());
    node.fn(*slot, std::span<const bool>(needs, n_in), std::span<Tensor<T>>(grad_in));
    slot.reset();

    const bool corrupt = !g_gradient_fault.empty() && g_gradient_fault == node.op;
    for (std::size_t i = 0; i < n_in; ++i) {
      if (!needs[i]) continue;
      Tensor<T>& g = grad_in[i];
      const NodeId src = node.inputs[i];
      const Shape& expected = nodes_[static_cast<std::size_t>(src)].shape;
      if (!g.defined() || g.shape() != expected) {
        throw Error("op '" + node.op + "' produced a gradient of shape " +
                    (g.defined() ? shape_str(g.shape()) : std::string("<none>")) + " for an input of shape " +
                    shape_str(expected));
      }
      if (corrupt) {
        for (auto& v : g.mutable_data()) v *= T(1.01);
      }
      auto& dst = grads[static_cast<std::size_t>(src)];
      if (!dst) {
        dst = std::move(g);
      } else {
        auto acc = dst->mutable_data();
        auto add = g.data();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
      }
    }
  }
  return result;
}

template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace exposura
