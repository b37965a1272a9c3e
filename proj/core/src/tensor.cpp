#include "exposura/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "exposura/error.hpp"

namespace exposura {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(shape));
  }
  for (auto e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be >= 1, got shape " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_)) {
    throw ShapeError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                     " values, got " + std::to_string(values.size()));
  }
  data_ = std::make_shared<std::vector<T>>(std::move(values));
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!data_) return {};
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
  return {data_->data(), data_->size()};
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

template <typename T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const auto idx = ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  return (*data_)[static_cast<std::size_t>(idx)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.node_ = kNoNode;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = detach();
  out.shape_ = std::move(shape);
  return out;
}

template <typename T>
bool Tensor<T>::same_values(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (numel() == 0) return true;
  return std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(T)) == 0;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace exposura
