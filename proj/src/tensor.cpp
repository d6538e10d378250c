#include "sdpoint/tensor.hpp"

#include <limits>
#include <sstream>

namespace sdpoint {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
  return os.str();
}

std::size_t checked_volume(const Shape& s) {
  std::size_t total = 1;
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d == 0) throw UsageError("tensor dimension must be >= 1, got shape " + to_string(s));
    if (total > std::numeric_limits<std::size_t>::max() / d)
      throw UsageError("tensor volume overflows for shape " + to_string(s));
    total *= d;
  }
  return total;
}

template <typename T>
BasicTensor4<T>::BasicTensor4(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != checked_volume(shape_))
    throw UsageError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
}

template <typename T>
void BasicTensor4<T>::fill(T value) {
  for (T& v : data_) v = value;
}

template <typename T>
BasicTensor4<T> BasicTensor4<T>::sample(std::size_t n) const {
  Shape s = shape_;
  s.n = 1;
  const std::size_t stride = s.c * s.h * s.w;
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                     data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
  return BasicTensor4<T>(s, std::move(out));
}

template <typename T>
BasicTensor4<T> elementwise(ElementwiseOp op, const BasicTensor4<T>& a, const BasicTensor4<T>& b) {
  if (a.shape() != b.shape())
    throw UsageError("elementwise shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  BasicTensor4<T> out(a.shape());
  const std::size_t n = a.size();
  switch (op) {
    case ElementwiseOp::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case ElementwiseOp::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
      break;
    case ElementwiseOp::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

template <typename T>
void add_inplace(BasicTensor4<T>& a, const BasicTensor4<T>& b) {
  if (a.shape() != b.shape())
    throw UsageError("add shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
BasicTensor4<T> reduce_spatial_mean(const BasicTensor4<T>& x) {
  const Shape& s = x.shape();
  BasicTensor4<T> out(Shape{s.n, s.c, 1, 1});
  const std::size_t area = s.spatial();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      // Kahan summation
      T sum = 0, comp = 0;
      for (std::size_t i = 0; i < area; ++i) {
        T y = p[i] - comp;
        T t = sum + y;
        comp = (t - sum) - y;
        sum = t;
      }
      out(n, c, 0, 0) = sum / static_cast<T>(area);
    }
  }
  return out;
}

template class BasicTensor4<float>;
template class BasicTensor4<double>;
template Tensor4 elementwise(ElementwiseOp, const Tensor4&, const Tensor4&);
template Tensor4d elementwise(ElementwiseOp, const Tensor4d&, const Tensor4d&);
template void add_inplace(Tensor4&, const Tensor4&);
template void add_inplace(Tensor4d&, const Tensor4d&);
template Tensor4 reduce_spatial_mean(const Tensor4&);
template Tensor4d reduce_spatial_mean(const Tensor4d&);

}  // namespace sdpoint
