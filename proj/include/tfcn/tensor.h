// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tfcn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or extents do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value that must be finite was NaN or infinite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// A file that is absent, unreadable or not in the expected format.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Rank-4 extents laid out as (batch, channels, freq, time), time fastest.
struct Shape {
  int batch = 0;
  int channels = 0;
  int freq = 0;
  int time = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(batch) * channels * freq * time;
  }
  std::size_t plane() const { return static_cast<std::size_t>(freq) * time; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  int batch() const noexcept { return shape_.batch; }
  int channels() const noexcept { return shape_.channels; }
  int freq() const noexcept { return shape_.freq; }
  int time() const noexcept { return shape_.time; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  std::size_t index(int n, int c, int f, int t) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.channels + c) * shape_.freq +
            f) * shape_.time + t;
  }
  T& operator()(int n, int c, int f, int t) noexcept {
    return data_[index(n, c, f, t)];
  }
  const T& operator()(int n, int c, int f, int t) const noexcept {
    return data_[index(n, c, f, t)];
  }

  /// The contiguous (freq × time) plane of one channel of one batch item.
  std::span<T> plane(int n, int c) noexcept {
    return std::span<T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  std::span<const T> plane(int n, int c) const noexcept {
    return std::span<const T>(data_).subspan(index(n, c, 0, 0),
                                             shape_.plane());
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  /// Same shape and values; throws ShapeError on a size mismatch.
  void reshape(Shape shape);

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.values()[i] = static_cast<U>(data_[i]);
    out.set_requires_grad(requires_grad_);
    return out;
  }

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<T> data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;

/// Non-owning view of one learnable block (or a statistics buffer, which
/// has an empty `grad`). Views are invalidated when the owner is copied.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<int> shape;
  std::span<T> value;
  std::span<T> grad;

  std::size_t size() const { return value.size(); }
};

/// Throws ShapeError naming `what` when the two shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace tfcn
