#include "prunelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "prunelab/error.hpp"

namespace prunelab {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  require(values_.size() == numel(shape_), ErrorKind::ShapeMismatch,
          "tensor buffer of " + std::to_string(values_.size()) + " elements does not match shape " +
              shape_string(shape_));
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  ensure_grad();
  std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  require(numel(shape) == values_.size(), ErrorKind::ShapeMismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::resize(const Shape& shape) {
  if (shape_ != shape) {
    shape_ = shape;
    values_.resize(numel(shape_));
  }
  if (!grad_.empty()) grad_.resize(values_.size());
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace prunelab
