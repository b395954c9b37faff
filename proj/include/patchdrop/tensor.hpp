#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchdrop {

// Raised for every contract violation in the library (shape mismatch, bad
// argument, malformed file).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major n-dimensional array. Image batches use NCHW.
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_))
      throw Error("tensor: data length " + std::to_string(data_.size()) +
                  " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors for NCHW tensors.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h,
              std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
      throw Error("tensor: cannot reshape " + shape_str(shape_) + " to " +
                  shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T{}); }

  // Slice along the leading axis: samples [begin, begin+count).
  Tensor slice(std::size_t begin, std::size_t count) const {
    if (shape_.empty() || begin + count > shape_[0])
      throw Error("tensor: slice out of range");
    Shape s = shape_;
    s[0] = count;
    const std::size_t stride = data_.size() / shape_[0];
    return Tensor(std::move(s),
                  std::vector<T>(data_.begin() + begin * stride,
                                 data_.begin() + (begin + count) * stride));
  }

  // Sample `i` of a batch, with the leading axis removed.
  Tensor sample(std::size_t i) const {
    Tensor t = slice(i, 1);
    t.shape_.erase(t.shape_.begin());
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  void check_dims() const {
    for (auto d : shape_)
      if (d == 0) throw Error("tensor: zero-sized dimension in " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Stacks equally-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw Error("stack: no tensors");
  Shape s = items.front().shape();
  std::vector<T> out;
  out.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    if (t.shape() != s) throw Error("stack: shape mismatch");
    out.insert(out.end(), t.vec().begin(), t.vec().end());
  }
  s.insert(s.begin(), items.size());
  return Tensor<T>(std::move(s), std::move(out));
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  return stack(std::span<const Tensor<T>>(items));
}

}  // namespace patchdrop
