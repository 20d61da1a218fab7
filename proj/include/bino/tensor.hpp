#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bino/errors.hpp"

namespace bino {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array. `T` is float for everything except gradient checking,
// which instantiates the engine with double.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D convenience accessors (row-major).
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool requires_grad() const { return requires_grad_; }
  BasicTensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    BasicTensor out(std::move(shape), data_);
    out.requires_grad_ = requires_grad_;
    return out;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (std::size_t e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;

}  // namespace bino
