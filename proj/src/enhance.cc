// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/enhance.h"

#include <algorithm>
#include <cmath>

#include "tfcn/grad_check.h"

namespace tfcn {

namespace {

void check_compatible(const Model& model, const Normalizer& norm,
                      const StftConfig& cfg) {
  const int bins = model.config().freq_bins;
  if (cfg.lps_bins() != bins)
    throw ShapeError("model expects " + std::to_string(bins) +
                     " bins, STFT yields " + std::to_string(cfg.lps_bins()));
  if (norm.bins() != bins)
    throw ShapeError("normalizer has " + std::to_string(norm.bins()) +
                     " bins, model expects " + std::to_string(bins));
}

}  // namespace

Waveform enhance(Model& model, const Normalizer& norm,
                 std::span<const float> noisy, const StftConfig& cfg) {
  check_compatible(model, norm, cfg);
  model.set_mode(NormMode::kInference);
  const ComplexSpectrogram spec = stft(noisy, cfg);
  const LpsMatrix x = normalize(lps(spec), norm);
  const Tensor y = model.forward(to_tensor(std::span(&x, 1)));
  const LpsMatrix est = denormalize(from_tensor(y), norm);
  return istft(reconstruct(est, spec), cfg);
}

float peak_normalize(std::vector<float>& samples) {
  float peak = 0.0f;
  for (float v : samples) peak = std::max(peak, std::abs(v));
  if (peak <= 32767.0f / 32768.0f) return 1.0f;
  const float gain = 0.99f / peak;
  for (float& v : samples) v *= gain;
  return gain;
}

// ---------------------------------------------------------------------------
// StreamingNetwork

namespace {

// Frames of one feature map, indexed from the start of the stream. Each
// frame is a (channels, freq) block.
struct FrameQueue {
  int channels = 0;
  int freq = 0;
  std::int64_t base = 0;
  std::deque<std::vector<float>> frames;

  std::int64_t end() const { return base + static_cast<std::int64_t>(frames.size()); }
  const std::vector<float>& at(std::int64_t i) const {
    return frames[static_cast<std::size_t>(i - base)];
  }
  void push(std::vector<float> f) { frames.push_back(std::move(f)); }
  void drop_before(std::int64_t i) {
    while (base < i && !frames.empty()) {
      frames.pop_front();
      ++base;
    }
  }
};

Tensor frame_tensor(const std::vector<float>& f, int channels, int freq) {
  return Tensor(Shape{1, channels, freq, 1}, f);
}

std::vector<float> tensor_frame(Tensor t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

// A convolution with a temporal kernel, evaluated one output frame at a
// time on a window holding only the tapped frames.
struct WindowedConv {
  const Conv2dLayer<float>* layer = nullptr;
  ConvSpec spec;  // temporal padding removed, taps made adjacent
  int left = 0;
  int right = 0;
  int dilation = 1;

  explicit WindowedConv(const Conv2dLayer<float>& l) : layer(&l), spec(l.spec) {
    left = l.spec.pad.left_t;
    right = l.spec.pad.right_t;
    dilation = l.spec.dilation.time;
    spec.pad.left_t = 0;
    spec.pad.right_t = 0;
    spec.dilation.time = 1;
  }
  int kernel() const { return spec.kernel.time; }

  // Output frame j can be computed once input frame j + right exists, or
  // once the input is complete (later taps then read zeros).
  bool ready(std::int64_t j, const FrameQueue& in, std::int64_t total) const {
    if (total >= 0 && j >= total) return false;
    return j + right < in.end() || (total >= 0 && in.end() == total);
  }

  std::vector<float> run(std::int64_t j, const FrameQueue& in) const {
    const int kt = kernel();
    Tensor window(Shape{1, in.channels, in.freq, kt});
    for (int b = 0; b < kt; ++b) {
      const std::int64_t src = j - left + std::int64_t(b) * dilation;
      if (src < in.base && src >= 0)
        throw Error("streaming: frame " + std::to_string(src) + " was released");
      if (src < 0 || src >= in.end()) continue;
      const auto& f = in.at(src);
      for (int c = 0; c < in.channels; ++c)
        for (int q = 0; q < in.freq; ++q)
          window(0, c, q, b) = f[std::size_t(c) * in.freq + q];
    }
    return tensor_frame(conv2d_forward<float>(window, layer->weight, spec, {},
                                              ConvAlgorithm::kDirect));
  }

  std::int64_t oldest_needed(std::int64_t next) const { return next - left; }
};

}  // namespace

struct StreamingNetwork::Impl {
  Model model;
  int io_channels;
  int io_freq;
  std::int64_t total = -1;  // input frame count once flushed

  FrameQueue normed;                  // input BN output
  WindowedConv input_conv;
  std::vector<FrameQueue> features;   // 0: input block, 1 + i: block i
  std::vector<FrameQueue> fronts;     // block i: BN(PReLU(conv_0))
  std::vector<WindowedConv> mids;     // block i: conv_1
  std::int64_t in_count = 0;
  std::int64_t out_count = 0;

  explicit Impl(const Model& m)
      : model(m.cast<float>()),
        io_channels(m.config().io_channels()),
        io_freq(m.config().spatial_freq()),
        input_conv(model.input_conv()) {
    model.set_mode(NormMode::kInference);
    const ModelConfig& cfg = model.config();
    normed = {io_channels, io_freq, 0, {}};
    const int blocks = cfg.repeated_blocks * cfg.dilated_blocks;
    features.resize(1 + blocks);
    features[0] = {model.input_conv().spec.out_channels, io_freq, 0, {}};
    for (int i = 0; i < blocks; ++i) {
      const auto& blk = model.block(i / cfg.dilated_blocks, i % cfg.dilated_blocks);
      fronts.push_back({blk.conv0.spec.out_channels, io_freq, 0, {}});
      mids.emplace_back(blk.conv1);
      features[1 + i] = {blk.conv2.spec.out_channels, io_freq, 0, {}};
    }
  }

  std::vector<std::vector<float>> advance() {
    const ModelConfig& cfg = model.config();
    const int m = cfg.dilated_blocks;
    std::vector<std::vector<float>> out;

    while (input_conv.ready(features[0].end(), normed, total))
      features[0].push(input_conv.run(features[0].end(), normed));

    for (int i = 0; i < static_cast<int>(fronts.size()); ++i) {
      const int r = i / m;
      const int n = i % m;
      auto& blk = model.block(r, n);
      const auto& ids = model.block_inputs(r, n);
      FrameQueue& front = fronts[i];

      std::int64_t avail = features[ids[0]].end();
      for (int id : ids) avail = std::min(avail, features[id].end());
      while (front.end() < avail) {
        const std::int64_t j = front.end();
        std::vector<Tensor> parts;
        for (int id : ids)
          parts.push_back(frame_tensor(features[id].at(j), features[id].channels,
                                       io_freq));
        Tensor x;
        if (parts.size() == 1) {
          x = std::move(parts[0]);
        } else {
          std::vector<const Tensor*> ptrs;
          for (const auto& p : parts) ptrs.push_back(&p);
          x = concat_channels<float>(ptrs);
        }
        Tensor a = conv2d_forward<float>(x, blk.conv0.weight, blk.conv0.spec, {},
                                         ConvAlgorithm::kDirect);
        front.push(tensor_frame(batchnorm_forward<float>(
            prelu_forward<float>(a, blk.prelu0.state), blk.bn0.state)));
      }

      FrameQueue& feat = features[1 + i];
      const FrameQueue& residual = features[model.primary_input(r, n)];
      while (mids[i].ready(feat.end(), front, total) &&
             feat.end() < residual.end()) {
        const std::int64_t j = feat.end();
        Tensor b = frame_tensor(mids[i].run(j, front), front.channels, io_freq);
        Tensor h1 = batchnorm_forward<float>(
            prelu_forward<float>(b, blk.prelu1.state), blk.bn1.state);
        Tensor c = conv2d_forward<float>(h1, blk.conv2.weight, blk.conv2.spec, {},
                                         ConvAlgorithm::kDirect);
        feat.push(tensor_frame(add_residual<float>(
            c, frame_tensor(residual.at(j), residual.channels, io_freq))));
      }
    }

    FrameQueue& last = features.back();
    while (out_count < last.end()) {
      Tensor pre = conv2d_forward<float>(
          frame_tensor(last.at(out_count), last.channels, io_freq),
          model.output_conv().weight, model.output_conv().spec, {},
          ConvAlgorithm::kDirect);
      out.push_back(tensor_frame(
          prelu_forward<float>(pre, model.output_prelu().state)));
      ++out_count;
    }
    release();
    return out;
  }

  // Drops frames every consumer has moved past.
  void release() {
    const ModelConfig& cfg = model.config();
    const int m = cfg.dilated_blocks;
    const int blocks = static_cast<int>(fronts.size());
    normed.drop_before(input_conv.oldest_needed(features[0].end()));
    std::vector<std::int64_t> keep(features.size());
    for (std::size_t k = 0; k < features.size(); ++k) keep[k] = features[k].end();
    keep.back() = std::min(keep.back(), out_count);
    for (int i = 0; i < blocks; ++i) {
      for (int id : model.block_inputs(i / m, i % m))
        keep[id] = std::min(keep[id], fronts[i].end());
      const int p = model.primary_input(i / m, i % m);
      keep[p] = std::min(keep[p], features[1 + i].end());
      fronts[i].drop_before(mids[i].oldest_needed(features[1 + i].end()));
    }
    for (std::size_t k = 0; k < features.size(); ++k)
      features[k].drop_before(keep[k]);
  }
};

StreamingNetwork::StreamingNetwork(const Model& model)
    : impl_(std::make_unique<Impl>(model)) {}
StreamingNetwork::~StreamingNetwork() = default;
StreamingNetwork::StreamingNetwork(StreamingNetwork&&) noexcept = default;
StreamingNetwork& StreamingNetwork::operator=(StreamingNetwork&&) noexcept =
    default;

std::vector<std::vector<float>> StreamingNetwork::push(
    std::span<const float> frame) {
  Impl& s = *impl_;
  if (s.total >= 0) throw Error("streaming: push after flush");
  const int bins = s.model.config().freq_bins;
  if (static_cast<int>(frame.size()) != bins)
    throw ShapeError("streaming: frame has " + std::to_string(frame.size()) +
                     " bins, model expects " + std::to_string(bins));
  Tensor x(Shape{1, s.io_channels, s.io_freq, 1},
           std::vector<float>(frame.begin(), frame.end()));
  require_finite(x, "streaming: input frame");
  s.normed.push(tensor_frame(s.model.input_norm(x)));
  ++s.in_count;
  return s.advance();
}

std::vector<std::vector<float>> StreamingNetwork::flush() {
  Impl& s = *impl_;
  if (s.total < 0) s.total = s.in_count;
  return s.advance();
}

int StreamingNetwork::look_ahead() const {
  return impl_->model.pad_plan().future_context();
}
std::int64_t StreamingNetwork::frames_in() const { return impl_->in_count; }
std::int64_t StreamingNetwork::frames_out() const { return impl_->out_count; }

// ---------------------------------------------------------------------------
// StreamingEnhancer

StreamingEnhancer::StreamingEnhancer(const Model& model, const Normalizer& norm,
                                     const StftConfig& cfg)
    : cfg_(cfg), norm_(norm), net_(model), fft_(cfg) {
  cfg.validate();
  check_compatible(model, norm, cfg);
  overlap_.assign(cfg.frame_len, 0.0f);
}

std::vector<float> StreamingEnhancer::push(std::span<const float> samples) {
  pending_.insert(pending_.end(), samples.begin(), samples.end());
  std::vector<float> out;
  std::size_t pos = 0;
  const std::size_t len = cfg_.frame_len;
  while (pending_.size() - pos >= len) {
    ComplexSpectrogram frame(1, cfg_.bins());
    fft_.analyze(std::span<const float>(pending_).subspan(pos, len),
                 frame.frame(0));
    const LpsMatrix x = normalize(lps(frame), norm_);
    noisy_.emplace_back(frame.data);
    auto ready = net_.push(x.data);
    auto chunk = emit(std::move(ready), false);
    out.insert(out.end(), chunk.begin(), chunk.end());
    pos += cfg_.hop;
  }
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(pos));
  return out;
}

std::vector<float> StreamingEnhancer::finish() {
  return emit(net_.flush(), true);
}

std::vector<float> StreamingEnhancer::emit(
    std::vector<std::vector<float>> frames, bool last) {
  std::vector<float> out;
  const int hop = cfg_.hop;
  const int n = cfg_.frame_len;
  std::vector<float> buf(n);
  for (auto& f : frames) {
    LpsMatrix y(1, static_cast<int>(f.size()));
    y.data = std::move(f);
    ComplexSpectrogram noisy(1, cfg_.bins());
    noisy.data = std::move(noisy_.front());
    noisy_.pop_front();
    const ComplexSpectrogram rec = reconstruct(denormalize(y, norm_), noisy);
    fft_.synthesize(rec.frame(0), buf);
    for (int i = 0; i < n; ++i) overlap_[i] += buf[i];
    // Samples before the next frame's start are final.
    out.insert(out.end(), overlap_.begin(), overlap_.begin() + hop);
    std::copy(overlap_.begin() + hop, overlap_.end(), overlap_.begin());
    std::fill(overlap_.end() - hop, overlap_.end(), 0.0f);
    ++released_frames_;
  }
  if (last && released_frames_ > 0)
    out.insert(out.end(), overlap_.begin(), overlap_.begin() + (n - hop));
  return out;
}

}  // namespace tfcn
