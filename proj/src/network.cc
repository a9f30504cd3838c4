// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/network.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "tfcn/grad_check.h"

namespace tfcn {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kTcnLps:
      return "TCN_LPS";
    case Variant::kTfcn:
      return "TFCN";
    case Variant::kTfcnD:
      return "TFCN_D";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "TCN_LPS") return Variant::kTcnLps;
  if (name == "TFCN") return Variant::kTfcn;
  if (name == "TFCN_D") return Variant::kTfcnD;
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected TCN_LPS, TFCN or TFCN_D)");
}

std::string CausalityMode::str() const {
  switch (kind) {
    case Kind::kNonCausal:
      return "non_causal";
    case Kind::kCausal:
      return "causal";
    case Kind::kSemiCausal:
      return "semi_causal(" + std::to_string(look_ahead_frames) + ")";
  }
  return "?";
}

ModelConfig ModelConfig::preset(Variant v) {
  ModelConfig cfg;
  cfg.variant = v;
  switch (v) {
    case Variant::kTfcn:
      break;
    case Variant::kTfcnD:
      cfg.dense_intra = true;
      cfg.dense_inter = true;
      cfg.depthwise_dilated = false;
      break;
    case Variant::kTcnLps:
      cfg.block_channels = 256;
      cfg.bottleneck_channels = 512;
      cfg.input_kernel = {1, 1};
      cfg.dilated_kernel = {1, 3};
      break;
  }
  return cfg;
}

Extent2 ModelConfig::block_dilation(int n) const {
  int d = 1;
  for (int i = 0; i < n; ++i) d *= dilation_base;
  return {dilated_kernel.freq > 1 ? d : 1, d};
}

int ModelConfig::block_input_channels(int r, int n) const {
  const int repeat_inputs = dense_inter ? r + 1 : 1;
  int pieces;
  if (n == 0)
    pieces = repeat_inputs;
  else if (dense_intra)
    pieces = repeat_inputs + n;
  else
    pieces = 1;
  return pieces * block_channels;
}

namespace {

struct TemporalLayer {
  std::string name;
  Extent2 kernel;
  Extent2 dilation;
};

std::vector<TemporalLayer> temporal_layers(const ModelConfig& cfg) {
  std::vector<TemporalLayer> layers;
  layers.push_back({"input.conv", cfg.input_kernel, {1, 1}});
  for (int r = 0; r < cfg.repeated_blocks; ++r)
    for (int n = 0; n < cfg.dilated_blocks; ++n)
      layers.push_back({"blocks." + std::to_string(r) + "." +
                            std::to_string(n) + ".conv1",
                        cfg.dilated_kernel, cfg.block_dilation(n)});
  return layers;
}

int sum_half_pads(const ModelConfig& cfg) {
  int total = 0;
  for (const auto& l : temporal_layers(cfg))
    total += (l.kernel.time - 1) * l.dilation.time / 2;
  return total;
}

bool odd(int k) { return k > 0 && k % 2 == 1; }

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
  if (repeated_blocks < 1) fail("repeated_blocks must be ≥ 1");
  if (dilated_blocks < 1 || dilated_blocks > 16)
    fail("dilated_blocks must be in [1, 16]");
  if (block_channels < 1 || bottleneck_channels < 1)
    fail("channel counts must be positive");
  if (freq_bins < 1) fail("freq_bins must be positive");
  if (dilation_base < 1) fail("dilation_base must be ≥ 1");
  if (!odd(input_kernel.freq) || !odd(input_kernel.time))
    fail("input_kernel extents must be odd");
  if (!odd(dilated_kernel.freq) || !odd(dilated_kernel.time))
    fail("dilated_kernel extents must be odd");
  switch (variant) {
    case Variant::kTfcn:
      if (dense_intra || dense_inter || !depthwise_dilated)
        fail("TFCN requires dense_intra = dense_inter = false and "
             "depthwise_dilated = true");
      break;
    case Variant::kTfcnD:
      if (!dense_intra || !dense_inter || depthwise_dilated)
        fail("TFCN_D requires dense_intra = dense_inter = true and "
             "depthwise_dilated = false");
      break;
    case Variant::kTcnLps:
      if (input_kernel.freq != 1 || dilated_kernel.freq != 1)
        fail("TCN_LPS convolves along time only; frequency kernels must be 1");
      break;
  }
  switch (causality.kind) {
    case CausalityMode::Kind::kNonCausal:
    case CausalityMode::Kind::kCausal:
      if (causality.look_ahead_frames != 0)
        fail("look_ahead_frames is only meaningful for semi_causal");
      break;
    case CausalityMode::Kind::kSemiCausal: {
      const int max = sum_half_pads(*this);
      if (causality.look_ahead_frames < 0 ||
          causality.look_ahead_frames > max)
        fail("semi_causal look-ahead " +
             std::to_string(causality.look_ahead_frames) +
             " frames exceeds the maximum allowed " + std::to_string(max));
      break;
    }
  }
}

int PadPlan::past_context() const {
  int total = 0;
  for (const auto& l : layers) total += l.pad.left_t;
  return total;
}

int PadPlan::future_context() const {
  int total = 0;
  for (const auto& l : layers) total += l.pad.right_t;
  return total;
}

const LayerPad& PadPlan::at(std::string_view layer) const {
  for (const auto& l : layers)
    if (l.layer == layer) return l;
  throw ConfigError("pad plan has no layer '" + std::string(layer) + "'");
}

int max_look_ahead(const ModelConfig& cfg) {
  cfg.validate();
  return sum_half_pads(cfg);
}

PadPlan plan_padding(const ModelConfig& cfg) {
  cfg.validate();
  PadPlan plan;
  int budget = cfg.causality.look_ahead_frames;
  for (const auto& l : temporal_layers(cfg)) {
    LayerPad lp;
    lp.layer = l.name;
    lp.kernel = l.kernel;
    lp.dilation = l.dilation;
    const int total = (l.kernel.time - 1) * l.dilation.time;
    const int freq_half = (l.kernel.freq - 1) * l.dilation.freq / 2;
    lp.pad.left_f = freq_half;
    lp.pad.right_f = freq_half;
    int future = 0;
    switch (cfg.causality.kind) {
      case CausalityMode::Kind::kNonCausal:
        future = total / 2;
        break;
      case CausalityMode::Kind::kCausal:
        future = 0;
        break;
      case CausalityMode::Kind::kSemiCausal:
        future = std::min(total / 2, budget);
        budget -= future;
        break;
    }
    lp.pad.right_t = future;
    lp.pad.left_t = total - future;
    lp.clip_left = lp.pad.right_t;
    lp.clip_right = lp.pad.left_t;
    plan.layers.push_back(lp);
  }
  return plan;
}

ReceptiveField receptive_field(const ModelConfig& cfg) {
  const PadPlan plan = plan_padding(cfg);
  ReceptiveField rf;
  rf.past_frames = plan.past_context();
  rf.future_frames = plan.future_context();
  rf.freq_span = 1;
  for (const auto& l : plan.layers)
    rf.freq_span += (l.kernel.freq - 1) * l.dilation.freq;
  return rf;
}

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t io = cfg.io_channels();
  const std::size_t c = cfg.block_channels;
  const std::size_t h = cfg.bottleneck_channels;
  const std::size_t taps =
      static_cast<std::size_t>(cfg.dilated_kernel.freq) * cfg.dilated_kernel.time;
  std::size_t total = 2 * io;  // input BN
  total += c * io * cfg.input_kernel.freq * cfg.input_kernel.time;
  for (int r = 0; r < cfg.repeated_blocks; ++r)
    for (int n = 0; n < cfg.dilated_blocks; ++n) {
      total += static_cast<std::size_t>(cfg.block_input_channels(r, n)) * h;
      total += 1 + 2 * h;  // PReLU + BN
      total += cfg.depthwise_dilated ? h * taps : h * h * taps;
      total += 1 + 2 * h;
      total += h * c;
    }
  total += c * io + 1;  // output conv + PReLU
  return total;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> Conv2dLayer<T>::forward(const BasicTensor<T>& x,
                                       ConvAlgorithm algo) const {
  return conv2d_forward<T>(x, weight, spec, {}, algo);
}

template <typename T>
BasicTensor<T> Conv2dLayer<T>::backward(const BasicTensor<T>& grad_out,
                                        const BasicTensor<T>& input) {
  ConvGrads<T> g = conv2d_backward<T>(grad_out, input, weight, spec);
  for (std::size_t i = 0; i < weight_grad.size(); ++i)
    weight_grad[i] += g.weights[i];
  return std::move(g.input);
}

namespace {

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void add_into(BasicTensor<T>& dst, BasicTensor<T>&& src) {
  if (dst.size() == 0)
    dst = std::move(src);
  else
    accumulate(dst, src);
}

template <typename T>
Conv2dLayer<T> make_conv(const ConvSpec& spec, std::mt19937_64& rng) {
  Conv2dLayer<T> layer;
  layer.spec = spec;
  const double fan_in = static_cast<double>(spec.in_per_group()) *
                        spec.kernel.freq * spec.kernel.time;
  const double bound = std::sqrt(1.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  layer.weight.resize(spec.weight_count());
  for (T& w : layer.weight) w = static_cast<T>(dist(rng));
  layer.weight_grad.assign(layer.weight.size(), T(0));
  return layer;
}

template <typename T>
BatchNormLayer<T> make_bn(int channels) {
  BatchNormLayer<T> layer;
  layer.state = BatchNormState<T>(channels);
  layer.gamma_grad.assign(channels, T(0));
  layer.beta_grad.assign(channels, T(0));
  return layer;
}

template <typename T>
PReluLayer<T> make_prelu() {
  PReluLayer<T> layer;
  layer.state = PReluState<T>(AlphaSharing::kShared, 1, T(0.25));
  layer.alpha_grad.assign(1, T(0));
  return layer;
}

ConvSpec pointwise(int in, int out) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

}  // namespace

template <typename T>
Network<T>::Network(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), plan_(plan_padding(cfg)) {
  std::mt19937_64 rng(seed);
  const int io = cfg_.io_channels();
  const int c = cfg_.block_channels;
  const int h = cfg_.bottleneck_channels;
  const int m = cfg_.dilated_blocks;

  input_bn_ = make_bn<T>(io);
  {
    ConvSpec s;
    s.in_channels = io;
    s.out_channels = c;
    s.kernel = cfg_.input_kernel;
    s.pad = plan_.at("input.conv").pad;
    input_conv_ = make_conv<T>(s, rng);
  }
  for (int r = 0; r < cfg_.repeated_blocks; ++r) {
    for (int n = 0; n < m; ++n) {
      DilatedBlock<T> blk;
      blk.conv0 = make_conv<T>(pointwise(cfg_.block_input_channels(r, n), h), rng);
      blk.prelu0 = make_prelu<T>();
      blk.bn0 = make_bn<T>(h);
      ConvSpec s;
      s.in_channels = h;
      s.out_channels = h;
      s.kernel = cfg_.dilated_kernel;
      s.dilation = cfg_.block_dilation(n);
      s.groups = cfg_.depthwise_dilated ? h : 1;
      s.pad = plan_.at("blocks." + std::to_string(r) + "." + std::to_string(n) +
                       ".conv1")
                  .pad;
      blk.conv1 = make_conv<T>(s, rng);
      blk.prelu1 = make_prelu<T>();
      blk.bn1 = make_bn<T>(h);
      blk.conv2 = make_conv<T>(pointwise(h, c), rng);
      blocks_.push_back(std::move(blk));

      // Wiring. Repeated-block inputs: the input-block output and (dense
      // inter) every earlier repeated-block output, earliest first.
      const int prev_repeat_out = r == 0 ? 0 : 1 + (r - 1) * m + (m - 1);
      std::vector<int> repeat_in;
      if (cfg_.dense_inter) {
        repeat_in.push_back(0);
        for (int q = 0; q < r; ++q) repeat_in.push_back(1 + q * m + (m - 1));
      } else {
        repeat_in.push_back(prev_repeat_out);
      }
      std::vector<int> ids;
      int primary;
      if (n == 0) {
        ids = repeat_in;
        primary = prev_repeat_out;
      } else if (cfg_.dense_intra) {
        ids = repeat_in;
        for (int k = 0; k < n; ++k) ids.push_back(1 + r * m + k);
        primary = 1 + r * m + n - 1;
      } else {
        ids = {1 + r * m + n - 1};
        primary = ids[0];
      }
      inputs_.push_back(std::move(ids));
      primary_.push_back(primary);
    }
  }
  output_conv_ = make_conv<T>(pointwise(c, io), rng);
  output_prelu_ = make_prelu<T>();
}

template <typename T>
void Network<T>::set_mode(NormMode mode) {
  mode_ = mode;
  input_bn_.state.mode = mode;
  for (auto& b : blocks_) {
    b.bn0.state.mode = mode;
    b.bn1.state.mode = mode;
  }
}

template <typename T>
BasicTensor<T> Network<T>::gather(
    int r, int n, const std::vector<BasicTensor<T>>& features) const {
  const auto& ids = inputs_[flat(r, n)];
  std::vector<const BasicTensor<T>*> parts;
  parts.reserve(ids.size());
  for (int id : ids) parts.push_back(&features[id]);
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(parts));
}

template <typename T>
BasicTensor<T> Network<T>::input_norm(const BasicTensor<T>& x) {
  return batchnorm_forward<T>(x, input_bn_.state);
}

template <typename T>
BasicTensor<T> Network<T>::block_front(int r, int n,
                                       const BasicTensor<T>& input) {
  DilatedBlock<T>& blk = blocks_[flat(r, n)];
  BasicTensor<T> a = blk.conv0.forward(input, cfg_.conv_algorithm);
  return batchnorm_forward<T>(prelu_forward<T>(a, blk.prelu0.state),
                              blk.bn0.state);
}

template <typename T>
BasicTensor<T> Network<T>::block_back(int r, int n,
                                      const BasicTensor<T>& conv1_out,
                                      const BasicTensor<T>& residual) {
  DilatedBlock<T>& blk = blocks_[flat(r, n)];
  BasicTensor<T> h1 = batchnorm_forward<T>(
      prelu_forward<T>(conv1_out, blk.prelu1.state), blk.bn1.state);
  return add_residual<T>(blk.conv2.forward(h1, cfg_.conv_algorithm), residual);
}

template <typename T>
BasicTensor<T> Network<T>::output_stage(const BasicTensor<T>& feature) {
  return prelu_forward<T>(output_conv_.forward(feature, cfg_.conv_algorithm),
                          output_prelu_.state);
}

template <typename T>
BasicTensor<T> Network<T>::block_forward_impl(DilatedBlock<T>& blk,
                                              const BasicTensor<T>& input,
                                              const BasicTensor<T>& residual,
                                              bool record) {
  const ConvAlgorithm algo = cfg_.conv_algorithm;
  BasicTensor<T> a = blk.conv0.forward(input, algo);
  BatchNormCache<T> c0;
  BatchNormCache<T> c1;
  BasicTensor<T> h0 = batchnorm_forward<T>(prelu_forward<T>(a, blk.prelu0.state),
                                           blk.bn0.state, record ? &c0 : nullptr);
  BasicTensor<T> b = blk.conv1.forward(h0, algo);
  BasicTensor<T> h1 = batchnorm_forward<T>(prelu_forward<T>(b, blk.prelu1.state),
                                           blk.bn1.state, record ? &c1 : nullptr);
  BasicTensor<T> out = add_residual<T>(blk.conv2.forward(h1, algo), residual);
  if (record) {
    c0.normalized = BasicTensor<T>();
    c1.normalized = BasicTensor<T>();
    blk.record = {std::move(a), std::move(b), std::move(c0), std::move(c1)};
  }
  return out;
}

template <typename T>
BasicTensor<T> Network<T>::block_backward(DilatedBlock<T>& blk,
                                          const BasicTensor<T>& input,
                                          const BasicTensor<T>& grad_out) {
  auto& rec = blk.record;
  const BasicTensor<T> h0 = batchnorm_replay<T>(
      prelu_forward<T>(rec.pre0, blk.prelu0.state), blk.bn0.state, rec.bn0);
  const BasicTensor<T> h1 = batchnorm_replay<T>(
      prelu_forward<T>(rec.pre1, blk.prelu1.state), blk.bn1.state, rec.bn1);

  BasicTensor<T> g = blk.conv2.backward(grad_out, h1);
  BatchNormGrads<T> bn1 = batchnorm_backward<T>(g, rec.bn1, blk.bn1.state);
  add_into(blk.bn1.gamma_grad, bn1.gamma);
  add_into(blk.bn1.beta_grad, bn1.beta);
  PReluGrads<T> p1 = prelu_backward<T>(bn1.input, rec.pre1, blk.prelu1.state);
  add_into(blk.prelu1.alpha_grad, p1.alpha);
  g = blk.conv1.backward(p1.input, h0);
  BatchNormGrads<T> bn0 = batchnorm_backward<T>(g, rec.bn0, blk.bn0.state);
  add_into(blk.bn0.gamma_grad, bn0.gamma);
  add_into(blk.bn0.beta_grad, bn0.beta);
  PReluGrads<T> p0 = prelu_backward<T>(bn0.input, rec.pre0, blk.prelu0.state);
  add_into(blk.prelu0.alpha_grad, p0.alpha);
  g = blk.conv0.backward(p0.input, input);
  rec = {};
  return g;
}

template <typename T>
BasicTensor<T> Network<T>::run_block(int r, int n, const BasicTensor<T>& input,
                                     const BasicTensor<T>& residual,
                                     Recording rec) {
  return block_forward_impl(blocks_[flat(r, n)], input, residual,
                            rec == Recording::kOn);
}

template <typename T>
BasicTensor<T> Network<T>::backprop_block(int r, int n,
                                          const BasicTensor<T>& input,
                                          const BasicTensor<T>& grad_out) {
  return block_backward(blocks_[flat(r, n)], input, grad_out);
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& x, Recording rec,
                                   const ForwardHooks<T>* hooks) {
  if (x.channels() != 1 || x.freq() != cfg_.freq_bins || x.time() < 1 ||
      x.batch() < 1)
    throw ShapeError("forward: expected (batch, 1, " +
                     std::to_string(cfg_.freq_bins) + ", T ≥ 1), got " +
                     x.shape().str());
  require_finite(x, "forward: input");
  const bool record = rec == Recording::kOn;
  const Shape io_shape{x.batch(), cfg_.io_channels(), cfg_.spatial_freq(),
                       x.time()};
  BasicTensor<T> in = x;
  in.reshape(io_shape);

  BatchNormCache<T> in_cache;
  BasicTensor<T> h =
      batchnorm_forward<T>(in, input_bn_.state, record ? &in_cache : nullptr);
  std::vector<BasicTensor<T>> features(feature_count());
  features[0] = input_conv_.forward(h, cfg_.conv_algorithm);

  // Without recording, a feature is dropped once its last consumer ran.
  std::vector<int> last_use(feature_count(), -1);
  for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) {
    for (int id : inputs_[i]) last_use[id] = std::max(last_use[id], i);
    last_use[primary_[i]] = std::max(last_use[primary_[i]], i);
  }
  last_use.back() = static_cast<int>(blocks_.size());

  const int m = cfg_.dilated_blocks;
  for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) {
    const int r = i / m;
    const int n = i % m;
    const auto& ids = inputs_[i];
    BasicTensor<T> joined;
    if (ids.size() > 1) joined = gather(r, n, features);
    const BasicTensor<T>& input = ids.size() > 1 ? joined : features[ids[0]];
    if (hooks && hooks->on_block_input) hooks->on_block_input(r, n, input);
    features[1 + i] =
        block_forward_impl(blocks_[i], input, features[primary_[i]], record);
    if (n == m - 1 && hooks && hooks->on_repeat_output)
      hooks->on_repeat_output(r, features[1 + i]);
    if (!record)
      for (int id = 0; id < 1 + i; ++id)
        if (last_use[id] == i) features[id] = BasicTensor<T>();
  }

  BasicTensor<T> pre = output_conv_.forward(features.back(), cfg_.conv_algorithm);
  BasicTensor<T> y = prelu_forward<T>(pre, output_prelu_.state);
  y.reshape(x.shape());

  if (record) {
    recorded_ = true;
    rec_input_ = std::move(in);
    rec_input_bn_ = std::move(in_cache);
    rec_input_conv_in_ = std::move(h);
    rec_features_ = std::move(features);
    rec_output_pre_ = std::move(pre);
  }
  return y;
}

template <typename T>
BasicTensor<T> Network<T>::backward(const BasicTensor<T>& grad_out) {
  if (!recorded_)
    throw Error("backward: no recorded forward pass (use Recording::kOn)");
  BasicTensor<T> g = grad_out;
  g.reshape(rec_output_pre_.shape());

  PReluGrads<T> po = prelu_backward<T>(g, rec_output_pre_, output_prelu_.state);
  add_into(output_prelu_.alpha_grad, po.alpha);
  std::vector<BasicTensor<T>> grads(feature_count());
  grads.back() = output_conv_.backward(po.input, rec_features_.back());

  const int m = cfg_.dilated_blocks;
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    const int r = i / m;
    const int n = i % m;
    BasicTensor<T> go = std::move(grads[1 + i]);
    const auto& ids = inputs_[i];
    BasicTensor<T> joined;
    if (ids.size() > 1) joined = gather(r, n, rec_features_);
    const BasicTensor<T>& input = ids.size() > 1 ? joined : rec_features_[ids[0]];
    BasicTensor<T> gin = block_backward(blocks_[i], input, go);
    if (ids.size() == 1) {
      add_into(grads[ids[0]], std::move(gin));
    } else {
      std::vector<int> widths;
      for (int id : ids) widths.push_back(rec_features_[id].channels());
      auto pieces = split_channels<T>(gin, widths);
      for (std::size_t k = 0; k < ids.size(); ++k)
        add_into(grads[ids[k]], std::move(pieces[k]));
    }
    add_into(grads[primary_[i]], std::move(go));
  }

  BasicTensor<T> gh = input_conv_.backward(grads[0], rec_input_conv_in_);
  BatchNormGrads<T> bn = batchnorm_backward<T>(gh, rec_input_bn_, input_bn_.state);
  add_into(input_bn_.gamma_grad, bn.gamma);
  add_into(input_bn_.beta_grad, bn.beta);
  BasicTensor<T> gx = std::move(bn.input);
  gx.reshape(grad_out.shape());

  recorded_ = false;
  rec_input_ = {};
  rec_input_bn_ = {};
  rec_input_conv_in_ = {};
  rec_features_.clear();
  rec_output_pre_ = {};
  return gx;
}

namespace {

template <typename T>
ParamRef<T> ref(std::string name, std::vector<int> shape, std::vector<T>& value,
                std::vector<T>* grad) {
  ParamRef<T> p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value = value;
  if (grad) p.grad = *grad;
  return p;
}

std::vector<int> conv_shape(const ConvSpec& s) {
  return {s.out_channels, s.in_per_group(), s.kernel.freq, s.kernel.time};
}

}  // namespace

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  auto bn = [&](const std::string& prefix, BatchNormLayer<T>& l) {
    const int c = l.state.channels();
    out.push_back(ref<T>(prefix + ".gamma", {c}, l.state.gamma, &l.gamma_grad));
    out.push_back(ref<T>(prefix + ".beta", {c}, l.state.beta, &l.beta_grad));
  };
  auto conv = [&](const std::string& prefix, Conv2dLayer<T>& l) {
    out.push_back(ref<T>(prefix + ".weight", conv_shape(l.spec), l.weight,
                         &l.weight_grad));
  };
  auto prelu = [&](const std::string& prefix, PReluLayer<T>& l) {
    out.push_back(ref<T>(prefix + ".alpha",
                         {static_cast<int>(l.state.alpha.size())},
                         l.state.alpha, &l.alpha_grad));
  };
  bn("input.bn", input_bn_);
  conv("input.conv", input_conv_);
  for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) {
    const std::string p = "blocks." + std::to_string(i / cfg_.dilated_blocks) +
                          "." + std::to_string(i % cfg_.dilated_blocks);
    auto& b = blocks_[i];
    conv(p + ".conv0", b.conv0);
    prelu(p + ".prelu0", b.prelu0);
    bn(p + ".bn0", b.bn0);
    conv(p + ".conv1", b.conv1);
    prelu(p + ".prelu1", b.prelu1);
    bn(p + ".bn1", b.bn1);
    conv(p + ".conv2", b.conv2);
  }
  conv("output.conv", output_conv_);
  prelu("output.prelu", output_prelu_);
  return out;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::buffers() {
  std::vector<ParamRef<T>> out;
  auto bn = [&](const std::string& prefix, BatchNormLayer<T>& l) {
    const int c = l.state.channels();
    out.push_back(ref<T>(prefix + ".running_mean", {c}, l.state.running_mean,
                         nullptr));
    out.push_back(
        ref<T>(prefix + ".running_var", {c}, l.state.running_var, nullptr));
  };
  bn("input.bn", input_bn_);
  for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) {
    const std::string p = "blocks." + std::to_string(i / cfg_.dilated_blocks) +
                          "." + std::to_string(i % cfg_.dilated_blocks);
    bn(p + ".bn0", blocks_[i].bn0);
    bn(p + ".bn1", blocks_[i].bn1);
  }
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : const_cast<Network<T>*>(this)->parameters())
    total += p.size();
  return total;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename From, typename To>
void copy_state(Network<From>& from, Network<To>& to) {
  if (!(from.config() == to.config()))
    throw ConfigError("copy_state: networks were built from different configs");
  auto copy = [](std::vector<ParamRef<From>> src, std::vector<ParamRef<To>> dst) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].name != dst[i].name || src[i].size() != dst[i].size())
        throw ConfigError("copy_state: parameter layout mismatch at " +
                          src[i].name);
      for (std::size_t k = 0; k < src[i].size(); ++k)
        dst[i].value[k] = static_cast<To>(src[i].value[k]);
    }
  };
  copy(from.parameters(), to.parameters());
  copy(from.buffers(), to.buffers());
}

// ---------------------------------------------------------------------------

namespace {

Tensor random_input(int bins, int frames, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Tensor x(Shape{1, 1, bins, frames});
  for (float& v : x.values()) v = dist(rng);
  return x;
}

}  // namespace

ProbeResult probe_causality(Model& model, int frames, int look_ahead,
                            int trials, std::uint64_t seed) {
  if (frames < look_ahead + 2)
    throw ShapeError("probe_causality: need at least look_ahead + 2 frames");
  model.set_mode(NormMode::kInference);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  const int bins = model.config().freq_bins;
  ProbeResult result;
  for (int trial = 0; trial < trials; ++trial) {
    Tensor x = random_input(bins, frames, rng);
    const Tensor base = model.forward(x);
    std::uniform_int_distribution<int> pick(0, frames - look_ahead - 2);
    const int t = pick(rng);
    for (int f = 0; f < bins; ++f)
      for (int u = t + look_ahead + 1; u < frames; ++u) x(0, 0, f, u) = dist(rng);
    const Tensor out = model.forward(x);
    for (int f = 0; f < bins; ++f)
      for (int u = 0; u <= t; ++u)
        result.max_leak =
            std::max(result.max_leak,
                     static_cast<double>(std::abs(out(0, 0, f, u) - base(0, 0, f, u))));
    ++result.trials;
  }
  return result;
}

ReceptiveField probe_receptive_field(Model& model, int frames,
                                     std::uint64_t seed) {
  model.set_mode(NormMode::kInference);
  std::mt19937_64 rng(seed);
  const int bins = model.config().freq_bins;
  Tensor x = random_input(bins, frames, rng);
  const Tensor base = model.forward(x);
  const int t = frames / 2;
  for (int f = 0; f < bins; ++f) x(0, 0, f, t) += 1.0f;
  const Tensor out = model.forward(x);
  int lo = frames;
  int hi = -1;
  for (int u = 0; u < frames; ++u)
    for (int f = 0; f < bins; ++f)
      if (out(0, 0, f, u) != base(0, 0, f, u)) {
        lo = std::min(lo, u);
        hi = std::max(hi, u);
      }
  ReceptiveField rf;
  if (hi < 0) return rf;
  rf.past_frames = hi - t;
  rf.future_frames = t - lo;
  rf.freq_span = receptive_field(model.config()).freq_span;
  return rf;
}

template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template class Network<float>;
template class Network<double>;
template void copy_state<float, float>(Network<float>&, Network<float>&);
template void copy_state<float, double>(Network<float>&, Network<double>&);
template void copy_state<double, float>(Network<double>&, Network<float>&);
template void copy_state<double, double>(Network<double>&, Network<double>&);

}  // namespace tfcn
