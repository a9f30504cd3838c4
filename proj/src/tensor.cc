// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/tensor.h"

#include <algorithm>
#include <cmath>

namespace tfcn {

std::string Shape::str() const {
  return "(" + std::to_string(batch) + ", " + std::to_string(channels) +
         ", " + std::to_string(freq) + ", " + std::to_string(time) + ")";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  if (shape.batch < 0 || shape.channels < 0 || shape.freq < 0 ||
      shape.time < 0)
    throw ShapeError("tensor: negative extent in " + shape.str());
  data_.assign(shape.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel())
    throw ShapeError("tensor: " + std::to_string(data_.size()) +
                     " values do not fill shape " + shape.str());
}

template <typename T>
void BasicTensor<T>::reshape(Shape shape) {
  if (shape.numel() != data_.size())
    throw ShapeError("tensor: cannot reshape " + shape_.str() + " to " +
                     shape.str());
  shape_ = shape;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a == b) return;
  const char* axis = a.batch != b.batch       ? "batch"
                     : a.channels != b.channels ? "channel"
                     : a.freq != b.freq         ? "freq"
                                                : "time";
  throw ShapeError(std::string(what) + ": " + axis + " axis mismatch, " +
                   a.str() + " vs " + b.str());
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace tfcn
