#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sdpoint/error.hpp"

namespace sdpoint {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t spatial() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Element count of a shape. Throws UsageError on a zero dimension or when
// the product overflows size_t.
std::size_t checked_volume(const Shape& s);

// Dense rank-4 array in row-major (n, c, h, w) order. Float is the working
// precision; double instances exist for finite-difference gradient checks.
template <typename T>
class BasicTensor4 {
 public:
  using value_type = T;

  BasicTensor4() = default;
  explicit BasicTensor4(Shape shape, T value = T(0))
      : shape_(shape), data_(checked_volume(shape), value) {}
  BasicTensor4(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the h*w plane of (n, c).
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.spatial(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.spatial();
  }

  void fill(T value);

  // Copies sample n (all channels) into a new tensor with batch size 1.
  BasicTensor4 sample(std::size_t n) const;

  template <typename U>
  BasicTensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor4<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor4&, const BasicTensor4&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor4 = BasicTensor4<float>;
using Tensor4d = BasicTensor4<double>;

enum class ElementwiseOp { kAdd, kSub, kMul };

template <typename T>
BasicTensor4<T> tensor_full(Shape shape, T value) {
  return BasicTensor4<T>(shape, value);
}

template <typename T>
BasicTensor4<T> elementwise(ElementwiseOp op, const BasicTensor4<T>& a, const BasicTensor4<T>& b);

// a += b, shapes must match.
template <typename T>
void add_inplace(BasicTensor4<T>& a, const BasicTensor4<T>& b);

// out[n,c,0,0] = mean of x[n,c,:,:], compensated summation.
template <typename T>
BasicTensor4<T> reduce_spatial_mean(const BasicTensor4<T>& x);

}  // namespace sdpoint
