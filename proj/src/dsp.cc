// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/dsp.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

namespace tfcn {

void StftConfig::validate() const {
  if (frame_len < 2 || frame_len % 2 != 0)
    throw ShapeError("stft: frame length must be even and ≥ 2");
  if (hop * 2 != frame_len)
    throw ShapeError("stft: hop must be half the frame length");
}

int StftConfig::frames(std::size_t samples) const {
  if (samples < static_cast<std::size_t>(frame_len)) return 0;
  return static_cast<int>((samples - frame_len) / hop) + 1;
}

std::vector<float> hann_window(int length) {
  std::vector<float> w(length);
  for (int n = 0; n < length; ++n)
    w[n] = static_cast<float>(
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length));
  return w;
}

namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

struct FrameTransform::Plans {
  float* real = nullptr;
  fftwf_complex* spec = nullptr;
  fftwf_plan forward = nullptr;
  fftwf_plan inverse = nullptr;
};

FrameTransform::FrameTransform(const StftConfig& cfg)
    : cfg_(cfg), window_(hann_window(cfg.frame_len)), plans_(new Plans) {
  cfg_.validate();
  const int n = cfg_.frame_len;
  plans_->real = fftwf_alloc_real(n);
  plans_->spec = fftwf_alloc_complex(cfg_.bins());
  std::lock_guard lock(planner_mutex());
  plans_->forward = fftwf_plan_dft_r2c_1d(n, plans_->real, plans_->spec,
                                          FFTW_ESTIMATE);
  plans_->inverse = fftwf_plan_dft_c2r_1d(n, plans_->spec, plans_->real,
                                          FFTW_ESTIMATE);
  if (!plans_->forward || !plans_->inverse)
    throw Error("stft: FFTW could not plan a " + std::to_string(n) +
                "-point transform");
}

FrameTransform::~FrameTransform() {
  std::lock_guard lock(planner_mutex());
  if (plans_->forward) fftwf_destroy_plan(plans_->forward);
  if (plans_->inverse) fftwf_destroy_plan(plans_->inverse);
  fftwf_free(plans_->real);
  fftwf_free(plans_->spec);
}

void FrameTransform::analyze(std::span<const float> samples,
                             std::span<std::complex<float>> bins) {
  const int n = cfg_.frame_len;
  if (samples.size() != static_cast<std::size_t>(n) ||
      bins.size() != static_cast<std::size_t>(cfg_.bins()))
    throw ShapeError("stft: frame buffers do not match the frame length");
  for (int i = 0; i < n; ++i) plans_->real[i] = samples[i] * window_[i];
  fftwf_execute(plans_->forward);
  for (int j = 0; j < cfg_.bins(); ++j)
    bins[j] = {plans_->spec[j][0], plans_->spec[j][1]};
}

void FrameTransform::synthesize(std::span<const std::complex<float>> bins,
                                std::span<float> samples) {
  const int n = cfg_.frame_len;
  if (samples.size() != static_cast<std::size_t>(n) ||
      bins.size() != static_cast<std::size_t>(cfg_.bins()))
    throw ShapeError("istft: frame buffers do not match the frame length");
  for (int j = 0; j < cfg_.bins(); ++j) {
    plans_->spec[j][0] = bins[j].real();
    plans_->spec[j][1] = bins[j].imag();
  }
  // A real signal has real DC and Nyquist bins; c2r ignores their imaginary
  // parts, so drop them explicitly for a well-defined inverse.
  plans_->spec[0][1] = 0.0f;
  plans_->spec[cfg_.bins() - 1][1] = 0.0f;
  fftwf_execute(plans_->inverse);
  const float scale = 1.0f / static_cast<float>(n);
  for (int i = 0; i < n; ++i) samples[i] = plans_->real[i] * scale;
}

ComplexSpectrogram stft(std::span<const float> samples, const StftConfig& cfg) {
  cfg.validate();
  if (samples.size() < static_cast<std::size_t>(cfg.frame_len))
    throw ShapeError("stft: input has " + std::to_string(samples.size()) +
                     " samples, at least " + std::to_string(cfg.frame_len) +
                     " are required");
  const int frames = cfg.frames(samples.size());
  ComplexSpectrogram spec(frames, cfg.bins());
  FrameTransform fft(cfg);
  for (int t = 0; t < frames; ++t)
    fft.analyze(samples.subspan(static_cast<std::size_t>(t) * cfg.hop,
                                cfg.frame_len),
                spec.frame(t));
  return spec;
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  return stft(std::span<const float>(wave.samples), cfg);
}

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg) {
  cfg.validate();
  if (spec.bins != cfg.bins())
    throw ShapeError("istft: expected " + std::to_string(cfg.bins()) +
                     " bins, got " + std::to_string(spec.bins));
  Waveform out;
  out.samples.assign(cfg.signal_length(spec.frames), 0.0f);
  FrameTransform fft(cfg);
  std::vector<float> frame(cfg.frame_len);
  for (int t = 0; t < spec.frames; ++t) {
    fft.synthesize(spec.frame(t), frame);
    float* dst = out.samples.data() + static_cast<std::size_t>(t) * cfg.hop;
    for (int i = 0; i < cfg.frame_len; ++i) dst[i] += frame[i];
  }
  // Periodic Hann at 50% overlap sums to exactly 1, so the COLA division is
  // the identity and is left out.
  return out;
}

LpsMatrix lps(const ComplexSpectrogram& spec) {
  if (spec.bins < 2) throw ShapeError("lps: spectrogram has fewer than 2 bins");
  LpsMatrix out(spec.frames, spec.bins - 1);
  for (int t = 0; t < spec.frames; ++t)
    for (int j = 0; j < out.bins; ++j) {
      const double re = spec.at(t, j).real();
      const double im = spec.at(t, j).imag();
      out.at(t, j) = static_cast<float>(std::log(re * re + im * im + kLpsFloor));
    }
  return out;
}

ComplexSpectrogram reconstruct(const LpsMatrix& est_lps,
                               const ComplexSpectrogram& noisy) {
  if (est_lps.frames != noisy.frames)
    throw ShapeError("reconstruct: estimate has " +
                     std::to_string(est_lps.frames) + " frames, noisy phase has " +
                     std::to_string(noisy.frames));
  if (est_lps.bins + 1 != noisy.bins)
    throw ShapeError("reconstruct: estimate has " + std::to_string(est_lps.bins) +
                     " bins, expected " + std::to_string(noisy.bins - 1));
  ComplexSpectrogram out(noisy.frames, noisy.bins);
  for (int t = 0; t < noisy.frames; ++t)
    for (int j = 0; j < est_lps.bins; ++j) {
      const double mag = std::exp(0.5 * static_cast<double>(est_lps.at(t, j)));
      const double phase = std::arg(std::complex<double>(noisy.at(t, j)));
      out.at(t, j) = std::complex<float>(std::polar(mag, phase));
    }
  return out;
}

Normalizer Normalizer::identity(int bins) {
  Normalizer n;
  n.mean.assign(bins, 0.0f);
  n.stddev.assign(bins, 1.0f);
  return n;
}

NormAccumulator::NormAccumulator(int bins)
    : bins_(bins), mean_(bins, 0.0), m2_(bins, 0.0) {}

void NormAccumulator::add(const LpsMatrix& m) {
  if (m.bins != bins_)
    throw ShapeError("norm stats: expected " + std::to_string(bins_) +
                     " bins, got " + std::to_string(m.bins));
  if (m.frames == 0) return;
  NormAccumulator item(bins_);
  item.count_ = m.frames;
  for (int j = 0; j < bins_; ++j) {
    double s = 0.0;
    for (int t = 0; t < m.frames; ++t) s += m.at(t, j);
    const double mu = s / m.frames;
    double q = 0.0;
    for (int t = 0; t < m.frames; ++t) {
      const double d = m.at(t, j) - mu;
      q += d * d;
    }
    item.mean_[j] = mu;
    item.m2_[j] = q;
  }
  merge(item);
}

void NormAccumulator::merge(const NormAccumulator& other) {
  if (other.bins_ != bins_) throw ShapeError("norm stats: bin count mismatch");
  if (other.count_ == 0) return;
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (int j = 0; j < bins_; ++j) {
    const double delta = other.mean_[j] - mean_[j];
    mean_[j] += delta * nb / n;
    m2_[j] += other.m2_[j] + delta * delta * na * nb / n;
  }
  count_ += other.count_;
}

Normalizer NormAccumulator::finish() const {
  if (count_ < 2)
    throw ShapeError("norm stats: need at least 2 frames, have " +
                     std::to_string(count_));
  Normalizer out;
  out.mean.resize(bins_);
  out.stddev.resize(bins_);
  for (int j = 0; j < bins_; ++j) {
    out.mean[j] = static_cast<float>(mean_[j]);
    out.stddev[j] = static_cast<float>(
        std::max(std::sqrt(m2_[j] / static_cast<double>(count_)), kStdFloor));
  }
  return out;
}

Normalizer compute_norm_stats(std::span<const LpsMatrix> corpus) {
  if (corpus.empty()) throw ShapeError("norm stats: empty corpus");
  NormAccumulator acc(corpus.front().bins);
  for (const auto& m : corpus) acc.add(m);
  return acc.finish();
}

namespace {

void check_bins(const LpsMatrix& x, const Normalizer& n, const char* op) {
  if (x.bins != n.bins() || n.stddev.size() != n.mean.size())
    throw ShapeError(std::string(op) + ": matrix has " + std::to_string(x.bins) +
                     " bins, normalizer has " + std::to_string(n.bins()));
}

}  // namespace

LpsMatrix normalize(const LpsMatrix& x, const Normalizer& n) {
  check_bins(x, n, "normalize");
  LpsMatrix out(x.frames, x.bins);
  for (int t = 0; t < x.frames; ++t)
    for (int j = 0; j < x.bins; ++j)
      out.at(t, j) = (x.at(t, j) - n.mean[j]) / n.stddev[j];
  return out;
}

LpsMatrix denormalize(const LpsMatrix& x, const Normalizer& n) {
  check_bins(x, n, "denormalize");
  LpsMatrix out(x.frames, x.bins);
  for (int t = 0; t < x.frames; ++t)
    for (int j = 0; j < x.bins; ++j)
      out.at(t, j) = x.at(t, j) * n.stddev[j] + n.mean[j];
  return out;
}

Tensor to_tensor(std::span<const LpsMatrix> items) {
  if (items.empty()) throw ShapeError("to_tensor: no items");
  const int frames = items.front().frames;
  const int bins = items.front().bins;
  Tensor out(Shape{static_cast<int>(items.size()), 1, bins, frames});
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (items[b].frames != frames || items[b].bins != bins)
      throw ShapeError("to_tensor: items differ in shape");
    for (int t = 0; t < frames; ++t)
      for (int j = 0; j < bins; ++j)
        out(static_cast<int>(b), 0, j, t) = items[b].at(t, j);
  }
  return out;
}

LpsMatrix from_tensor(const Tensor& t, int item) {
  if (t.channels() != 1 || item < 0 || item >= t.batch())
    throw ShapeError("from_tensor: expected a (batch, 1, bins, frames) tensor");
  LpsMatrix out(t.time(), t.freq());
  for (int u = 0; u < t.time(); ++u)
    for (int j = 0; j < t.freq(); ++j) out.at(u, j) = t(item, 0, j, u);
  return out;
}

}  // namespace tfcn
