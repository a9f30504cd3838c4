// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Layer primitives with hand-written backward passes. Every primitive is a
// function template instantiated for float (production) and double
// (finite-difference oracles).

#pragma once

#include <span>
#include <vector>

#include "tfcn/tensor.h"

namespace tfcn {

struct Extent2 {
  int freq = 1;
  int time = 1;
  bool operator==(const Extent2&) const = default;
};

struct Padding2 {
  int left_f = 0;
  int right_f = 0;
  int left_t = 0;
  int right_t = 0;
  bool operator==(const Padding2&) const = default;
};

enum class ConvAlgorithm { kDirect, kIm2col };

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  Extent2 kernel;
  Extent2 dilation;
  int groups = 1;
  Padding2 pad;
  bool has_bias = false;

  bool depthwise() const {
    return groups == in_channels && in_channels == out_channels;
  }
  int in_per_group() const { return in_channels / groups; }
  int out_per_group() const { return out_channels / groups; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_per_group() *
           kernel.freq * kernel.time;
  }
  /// (k − 1)·d + 1 along each axis.
  Extent2 dilated_extent() const {
    return {(kernel.freq - 1) * dilation.freq + 1,
            (kernel.time - 1) * dilation.time + 1};
  }
  void validate() const;
  /// Output extents for an input of the given spatial size.
  Extent2 output_extent(int freq, int time) const;
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  std::vector<T> weights;
  std::vector<T> bias;
};

/// Grouped, dilated 2-D cross-correlation. Weights are laid out as
/// (out, in/groups, k_f, k_t).
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              std::span<const T> weights, const ConvSpec& spec,
                              std::span<const T> bias = {},
                              ConvAlgorithm algo = ConvAlgorithm::kDirect);

/// `input` is the tensor the forward pass consumed.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out,
                             const BasicTensor<T>& input,
                             std::span<const T> weights, const ConvSpec& spec);

enum class NormMode { kTrain, kInference };

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.1);
  NormMode mode = NormMode::kTrain;

  BatchNormState() = default;
  explicit BatchNormState(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }

  template <typename U>
  BatchNormState<U> cast() const {
    BatchNormState<U> out;
    out.gamma.assign(gamma.begin(), gamma.end());
    out.beta.assign(beta.begin(), beta.end());
    out.running_mean.assign(running_mean.begin(), running_mean.end());
    out.running_var.assign(running_var.begin(), running_var.end());
    out.epsilon = static_cast<U>(epsilon);
    out.momentum = static_cast<U>(momentum);
    out.mode = mode;
    return out;
  }
};

/// What the backward pass needs from a batch-norm forward call.
template <typename T>
struct BatchNormCache {
  BasicTensor<T> normalized;  // x̂; may be dropped and rebuilt by replay
  std::vector<T> mean;        // batch mean (train) or running mean
  std::vector<T> inv_std;
  NormMode mode = NormMode::kTrain;
};

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Train mode normalises with batch statistics over (batch, freq, time) and
/// updates the running statistics; inference mode is a frozen affine map.
/// `cache` may be null when no backward pass follows.
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input,
                                 BatchNormState<T>& state,
                                 BatchNormCache<T>* cache = nullptr);

/// Recomputes the forward output and x̂ from a cache whose `normalized`
/// tensor was released, bit-identical to the original forward call.
template <typename T>
BasicTensor<T> batchnorm_replay(const BasicTensor<T>& input,
                                const BatchNormState<T>& state,
                                BatchNormCache<T>& cache);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out,
                                     const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state);

enum class AlphaSharing { kShared, kPerChannel };

template <typename T>
struct PReluState {
  std::vector<T> alpha;
  AlphaSharing sharing = AlphaSharing::kShared;

  PReluState() = default;
  PReluState(AlphaSharing mode, int channels, T init = T(0.25));
};

template <typename T>
struct PReluGrads {
  BasicTensor<T> input;
  std::vector<T> alpha;
};

template <typename T>
BasicTensor<T> prelu_forward(const BasicTensor<T>& input,
                             const PReluState<T>& state);

template <typename T>
PReluGrads<T> prelu_backward(const BasicTensor<T>& grad_out,
                             const BasicTensor<T>& input,
                             const PReluState<T>& state);

/// Channel concatenation, earliest input first.
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> inputs);

/// Inverse routing of concat_channels: slices grad_out by channel counts.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad_out,
                                           std::span<const int> channels);

template <typename T>
BasicTensor<T> add_residual(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// In-place a += b with shape checking.
template <typename T>
void accumulate(BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace tfcn
