// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// TCN / TFCN / TFCN-d models: an input block (BN + conv), R repeated blocks
// of M dilated blocks, and an output block (point-wise conv + PReLU). All
// temporal padding comes from a PadPlan so the same weights run
// non-causally, causally or with a bounded look-ahead.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tfcn/ops.h"
#include "tfcn/tensor.h"

namespace tfcn {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Variant { kTcnLps, kTfcn, kTfcnD };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct CausalityMode {
  enum class Kind { kNonCausal, kCausal, kSemiCausal };

  Kind kind = Kind::kNonCausal;
  int look_ahead_frames = 0;  // semi-causal only

  static CausalityMode non_causal() { return {}; }
  static CausalityMode causal() { return {Kind::kCausal, 0}; }
  static CausalityMode semi_causal(int frames) {
    return {Kind::kSemiCausal, frames};
  }
  bool operator==(const CausalityMode&) const = default;
  std::string str() const;
};

struct ModelConfig {
  Variant variant = Variant::kTfcn;
  int repeated_blocks = 4;
  int dilated_blocks = 8;
  int block_channels = 16;
  int bottleneck_channels = 64;
  Extent2 input_kernel{5, 7};
  Extent2 dilated_kernel{3, 3};
  int dilation_base = 2;
  int freq_bins = 256;
  CausalityMode causality;
  bool dense_intra = false;
  bool dense_inter = false;
  bool depthwise_dilated = true;
  ConvAlgorithm conv_algorithm = ConvAlgorithm::kDirect;

  static ModelConfig preset(Variant v);

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  /// TCN-LPS treats the frequency bins as channels of a 1-D sequence.
  bool one_dimensional() const { return variant == Variant::kTcnLps; }
  int io_channels() const { return one_dimensional() ? freq_bins : 1; }
  int spatial_freq() const { return one_dimensional() ? 1 : freq_bins; }

  /// Dilation of dilated block n: base^n on time, and on frequency when the
  /// kernel has a frequency extent.
  Extent2 block_dilation(int n) const;

  /// Channel count entering conv_0 of dilated block n in repeated block r.
  int block_input_channels(int r, int n) const;

  bool operator==(const ModelConfig&) const = default;
};

/// Temporal padding of one layer with a non-trivial kernel. `pad` is the
/// effective (asymmetric) padding; clip_left/clip_right express the same
/// layer as "pad the full P on both sides, then clip".
struct LayerPad {
  std::string layer;
  Extent2 kernel;
  Extent2 dilation;
  Padding2 pad;
  int clip_left = 0;
  int clip_right = 0;

  int total_time_pad() const { return (kernel.time - 1) * dilation.time; }
};

struct PadPlan {
  std::vector<LayerPad> layers;

  int past_context() const;
  int future_context() const;
  const LayerPad& at(std::string_view layer) const;
};

/// Largest look-ahead any allocation can provide: Σ P/2 over layers.
int max_look_ahead(const ModelConfig& cfg);

PadPlan plan_padding(const ModelConfig& cfg);

struct ReceptiveField {
  int past_frames = 0;
  int future_frames = 0;
  int freq_span = 0;

  int span() const { return past_frames + future_frames + 1; }
};

ReceptiveField receptive_field(const ModelConfig& cfg);

/// Learnable scalars: conv weights, BN γ/β, PReLU α. Computed from the
/// config alone.
std::size_t param_count(const ModelConfig& cfg);

enum class Recording { kOff, kOn };

template <typename T>
struct Conv2dLayer {
  ConvSpec spec;
  std::vector<T> weight;
  std::vector<T> weight_grad;

  BasicTensor<T> forward(const BasicTensor<T>& x, ConvAlgorithm algo) const;
  /// Accumulates into weight_grad; returns the input gradient.
  BasicTensor<T> backward(const BasicTensor<T>& grad_out,
                          const BasicTensor<T>& input);
};

template <typename T>
struct BatchNormLayer {
  BatchNormState<T> state;
  std::vector<T> gamma_grad;
  std::vector<T> beta_grad;
};

template <typename T>
struct PReluLayer {
  PReluState<T> state;
  std::vector<T> alpha_grad;
};

/// conv_0 (1×1) → PReLU → BN → conv_1 (dilated) → PReLU → BN → conv_2 (1×1),
/// plus the residual from the block's primary input.
template <typename T>
struct DilatedBlock {
  Conv2dLayer<T> conv0;
  PReluLayer<T> prelu0;
  BatchNormLayer<T> bn0;
  Conv2dLayer<T> conv1;
  PReluLayer<T> prelu1;
  BatchNormLayer<T> bn1;
  Conv2dLayer<T> conv2;

  // Recorded activations: the two conv outputs feeding PReLUs, and the BN
  // statistics. Everything else is replayed during backward.
  struct Record {
    BasicTensor<T> pre0;
    BasicTensor<T> pre1;
    BatchNormCache<T> bn0;
    BatchNormCache<T> bn1;
  };
  Record record;
};

template <typename T>
struct ForwardHooks {
  /// Sees (and may modify) the output of each repeated block.
  std::function<void(int repeat, BasicTensor<T>& output)> on_repeat_output;
  /// Sees the (possibly concatenated) input of each dilated block.
  std::function<void(int repeat, int block, const BasicTensor<T>& input)>
      on_block_input;
};

template <typename T>
class Network {
 public:
  /// build_model: layer stack with uniform ±sqrt(1/fan_in) weights drawn
  /// from `seed`, PReLU α = 0.25, BN γ = 1, β = 0.
  Network(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const PadPlan& pad_plan() const { return plan_; }

  NormMode mode() const { return mode_; }
  void set_mode(NormMode mode);

  /// Maps a (batch, 1, freq_bins, T) normalised LPS batch to the same shape.
  BasicTensor<T> forward(const BasicTensor<T>& x,
                         Recording rec = Recording::kOff,
                         const ForwardHooks<T>* hooks = nullptr);

  /// Backward through the last recorded forward. Parameter gradients are
  /// accumulated; returns the gradient with respect to the input.
  BasicTensor<T> backward(const BasicTensor<T>& grad_out);

  std::vector<ParamRef<T>> parameters();
  /// BN running statistics (no gradients).
  std::vector<ParamRef<T>> buffers();
  std::size_t parameter_count() const;
  void zero_grad();

  template <typename U>
  Network<U> cast() const;

  // Layer access for streaming inference, checkpoints and tests.
  BatchNormLayer<T>& input_bn() { return input_bn_; }
  const BatchNormLayer<T>& input_bn() const { return input_bn_; }
  Conv2dLayer<T>& input_conv() { return input_conv_; }
  const Conv2dLayer<T>& input_conv() const { return input_conv_; }
  DilatedBlock<T>& block(int r, int n) { return blocks_[flat(r, n)]; }
  const DilatedBlock<T>& block(int r, int n) const {
    return blocks_[flat(r, n)];
  }
  Conv2dLayer<T>& output_conv() { return output_conv_; }
  const Conv2dLayer<T>& output_conv() const { return output_conv_; }
  PReluLayer<T>& output_prelu() { return output_prelu_; }
  const PReluLayer<T>& output_prelu() const { return output_prelu_; }

  /// Feature 0 is the input-block output; feature 1 + r·M + n is the
  /// output of dilated block (r, n).
  const std::vector<int>& block_inputs(int r, int n) const {
    return inputs_[flat(r, n)];
  }
  int primary_input(int r, int n) const { return primary_[flat(r, n)]; }
  int feature_count() const { return 1 + static_cast<int>(blocks_.size()); }

  /// Stage-wise inference helpers used by streaming execution; they apply
  /// exactly the arithmetic of forward() to any number of frames.
  BasicTensor<T> input_norm(const BasicTensor<T>& x);
  BasicTensor<T> block_front(int r, int n, const BasicTensor<T>& input);
  BasicTensor<T> block_back(int r, int n, const BasicTensor<T>& conv1_out,
                            const BasicTensor<T>& residual);
  BasicTensor<T> output_stage(const BasicTensor<T>& feature);

  /// One dilated block in isolation (forward with optional recording, and
  /// the matching backward, which accumulates the block's parameter
  /// gradients and returns the gradient of its conv_0 input; the residual
  /// branch receives grad_out unchanged).
  BasicTensor<T> run_block(int r, int n, const BasicTensor<T>& input,
                           const BasicTensor<T>& residual, Recording rec);
  BasicTensor<T> backprop_block(int r, int n, const BasicTensor<T>& input,
                                const BasicTensor<T>& grad_out);

 private:
  int flat(int r, int n) const { return r * cfg_.dilated_blocks + n; }
  BasicTensor<T> block_forward_impl(DilatedBlock<T>& blk,
                                    const BasicTensor<T>& input,
                                    const BasicTensor<T>& residual,
                                    bool record);
  BasicTensor<T> block_backward(DilatedBlock<T>& blk,
                                const BasicTensor<T>& input,
                                const BasicTensor<T>& grad_out);
  BasicTensor<T> gather(int r, int n,
                        const std::vector<BasicTensor<T>>& features) const;

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  PadPlan plan_;
  NormMode mode_ = NormMode::kTrain;

  BatchNormLayer<T> input_bn_;
  Conv2dLayer<T> input_conv_;
  std::vector<DilatedBlock<T>> blocks_;
  Conv2dLayer<T> output_conv_;
  PReluLayer<T> output_prelu_;

  std::vector<std::vector<int>> inputs_;
  std::vector<int> primary_;

  // Recorded forward state.
  bool recorded_ = false;
  BasicTensor<T> rec_input_;
  BatchNormCache<T> rec_input_bn_;
  BasicTensor<T> rec_input_conv_in_;
  std::vector<BasicTensor<T>> rec_features_;
  BasicTensor<T> rec_output_pre_;
};

using Model = Network<float>;

inline Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model(cfg, seed);
}

/// Copies every parameter and buffer value between two networks built from
/// the same config.
template <typename From, typename To>
void copy_state(Network<From>& from, Network<To>& to);

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(cfg_, seed_);
  copy_state(const_cast<Network<T>&>(*this), out);
  out.set_mode(mode_);
  return out;
}

struct ProbeResult {
  double max_leak = 0.0;
  int trials = 0;
};

/// Perturbs every input frame after t + look_ahead and reports the largest
/// change of any output at frames ≤ t, over `trials` random (input, t)
/// draws. The model is switched to inference mode.
ProbeResult probe_causality(Model& model, int frames, int look_ahead,
                            int trials, std::uint64_t seed);

/// Empirical receptive field: perturbs one whole input frame and returns
/// the range of output frames that change, as (past, future) relative to
/// the perturbed frame. Inference mode.
ReceptiveField probe_receptive_field(Model& model, int frames,
                                     std::uint64_t seed);

}  // namespace tfcn
