#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace exposura {

using Shape = std::vector<std::int64_t>;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

/// Dense NCHW array of up to four dimensions.
///
/// Storage is shared between copies and copied on the first write through
/// mutable_data(), so passing tensors by value is cheap and values captured
/// by a tape never change underneath it. A tensor recorded on a Tape carries
/// the tape pointer and its node id; the tape must outlive it.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  const T* raw() const { return data_->data(); }

  /// Value of a single-element tensor.
  T item() const;
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  NodeId node() const { return node_; }
  Tape<T>* tape() const { return tape_; }
  bool on_tape() const { return tape_ != nullptr; }

  /// Same values, no tape membership.
  Tensor detach() const;
  /// Same values viewed with another shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_values(const Tensor& other) const;

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace exposura
