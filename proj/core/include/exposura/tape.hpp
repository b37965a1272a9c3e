#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "exposura/tensor.hpp"

namespace exposura {

/// Gradients of the leaf tensors reachable from a loss, keyed by node id.
template <typename T>
class Gradients {
 public:
  const Tensor<T>* find(const Tensor<T>& leaf) const;
  const Tensor<T>& at(const Tensor<T>& leaf) const;
  bool contains(const Tensor<T>& leaf) const { return find(leaf) != nullptr; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<NodeId, Tensor<T>> grads_;
};

/// Append-only record of differentiable operations.
///
/// Nodes are stored in creation order, which is a topological order since an
/// op can only consume tensors that already exist. A tape is not thread-safe.
template <typename T>
class Tape {
 public:
  /// Fills grad_in[i] for every i with needs[i]; the rest stay undefined.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out,
                                        std::span<const bool> needs,
                                        std::span<Tensor<T>> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf; the returned tensor shares storage with `value`.
  Tensor<T> watch(const Tensor<T>& value);

  Tensor<T> record(std::string_view op, Tensor<T> value,
                   std::span<const Tensor<T>* const> inputs, BackwardFn fn);

  /// Reverse sweep from a scalar loss. Leaves not reachable get no entry.
  /// The tape is left untouched, so repeated calls give identical results.
  Gradients<T> backward(const Tensor<T>& loss) const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    BackwardFn fn;
    Shape shape;
  };
  std::vector<Node> nodes_;
};

/// Records `value` on the tape shared by the taped inputs, or returns it
/// unchanged when none of them is taped.
template <typename T>
Tensor<T> record_op(std::string_view op, Tensor<T> value,
                    std::initializer_list<const Tensor<T>*> inputs,
                    typename Tape<T>::BackwardFn fn) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* in : inputs) {
    if (in != nullptr && in->tape() != nullptr) {
      tape = in->tape();
      break;
    }
  }
  if (tape == nullptr) return value;
  return tape->record(op, std::move(value), std::span<const Tensor<T>* const>(inputs.begin(), inputs.size()),
                      std::move(fn));
}

/// While alive, backward of the named op returns a deliberately wrong
/// gradient (scaled by 1.01) on the current thread. Used as a negative
/// control for gradient checking.
class ScopedGradientFault {
 public:
  explicit ScopedGradientFault(std::string op);
  ~ScopedGradientFault();
  ScopedGradientFault(const ScopedGradientFault&) = delete;
  ScopedGradientFault& operator=(const ScopedGradientFault&) = delete;

 private:
  std::string previous_;
};

extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace exposura
