// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// STFT front-end: Hann-windowed analysis without center padding, overlap-add
// synthesis, log-power spectra and per-bin normalisation statistics.

#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "tfcn/tensor.h"

namespace tfcn {

constexpr int kSampleRate = 16000;
constexpr double kLpsFloor = 1e-10;
constexpr double kStdFloor = 1e-5;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

struct StftConfig {
  int frame_len = 512;
  int hop = 256;

  void validate() const;
  int bins() const { return frame_len / 2 + 1; }
  /// LPS bins: the last STFT bin is dropped.
  int lps_bins() const { return frame_len / 2; }
  /// floor((n − frame_len) / hop) + 1; zero when n < frame_len.
  int frames(std::size_t samples) const;
  std::size_t signal_length(int frames) const {
    return frames < 1 ? 0 : static_cast<std::size_t>(hop) * (frames - 1) +
                                frame_len;
  }
  double frame_ms() const { return 1000.0 * hop / kSampleRate; }
  bool operator==(const StftConfig&) const = default;
};

/// Periodic Hann window, w[n] = 0.5 − 0.5·cos(2πn/N).
std::vector<float> hann_window(int length);

/// Frame-major complex spectrum: frames × bins.
struct ComplexSpectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<std::complex<float>> data;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(int frames, int bins)
      : frames(frames), bins(bins), data(std::size_t(frames) * bins) {}

  std::complex<float>& at(int t, int j) { return data[std::size_t(t) * bins + j]; }
  const std::complex<float>& at(int t, int j) const {
    return data[std::size_t(t) * bins + j];
  }
  std::span<std::complex<float>> frame(int t) {
    return std::span(data).subspan(std::size_t(t) * bins, bins);
  }
  std::span<const std::complex<float>> frame(int t) const {
    return std::span(data).subspan(std::size_t(t) * bins, bins);
  }
};

/// Frame-major real matrix: frames × bins.
struct LpsMatrix {
  int frames = 0;
  int bins = 0;
  std::vector<float> data;

  LpsMatrix() = default;
  LpsMatrix(int frames, int bins, float fill = 0.0f)
      : frames(frames), bins(bins), data(std::size_t(frames) * bins, fill) {}

  float& at(int t, int j) { return data[std::size_t(t) * bins + j]; }
  float at(int t, int j) const { return data[std::size_t(t) * bins + j]; }
  std::span<float> frame(int t) {
    return std::span(data).subspan(std::size_t(t) * bins, bins);
  }
  std::span<const float> frame(int t) const {
    return std::span(data).subspan(std::size_t(t) * bins, bins);
  }
};

/// Real FFT of one frame length with its own aligned work buffers. Not safe
/// to share between threads; cheap to create.
class FrameTransform {
 public:
  explicit FrameTransform(const StftConfig& cfg = {});
  ~FrameTransform();
  FrameTransform(const FrameTransform&) = delete;
  FrameTransform& operator=(const FrameTransform&) = delete;

  const StftConfig& config() const { return cfg_; }

  /// Windows `samples` (frame_len values) and writes frame_len/2 + 1 bins.
  void analyze(std::span<const float> samples,
               std::span<std::complex<float>> bins);
  /// Inverse DFT of one frame (no synthesis window), frame_len samples.
  void synthesize(std::span<const std::complex<float>> bins,
                  std::span<float> samples);

 private:
  struct Plans;
  StftConfig cfg_;
  std::vector<float> window_;
  std::unique_ptr<Plans> plans_;
};

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg = {});
ComplexSpectrogram stft(std::span<const float> samples,
                        const StftConfig& cfg = {});

/// Overlap-add of the per-frame inverse DFTs divided by the window's COLA
/// sum (1 for periodic Hann at 50% overlap).
Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg = {});

/// ln(|X|² + 1e-10) for bins 0 .. bins−2.
LpsMatrix lps(const ComplexSpectrogram& spec);

/// Magnitude exp(lps/2) on bins 0 .. F−1, zero on the last bin, phase taken
/// from `noisy`.
ComplexSpectrogram reconstruct(const LpsMatrix& est_lps,
                               const ComplexSpectrogram& noisy);

struct Normalizer {
  std::vector<float> mean;  // U
  std::vector<float> stddev;  // V

  int bins() const { return static_cast<int>(mean.size()); }
  static Normalizer identity(int bins);
};

/// Per-bin pooled mean / population std. Items are merged in the order they
/// are added, each reduced in double.
class NormAccumulator {
 public:
  explicit NormAccumulator(int bins = 256);
  void add(const LpsMatrix& m);
  void merge(const NormAccumulator& other);
  std::size_t frames() const { return count_; }
  Normalizer finish() const;

 private:
  int bins_;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

Normalizer compute_norm_stats(std::span<const LpsMatrix> corpus);

LpsMatrix normalize(const LpsMatrix& x, const Normalizer& n);
LpsMatrix denormalize(const LpsMatrix& x, const Normalizer& n);

/// Packs LPS matrices of equal shape into a (batch, 1, bins, frames) tensor.
Tensor to_tensor(std::span<const LpsMatrix> items);
LpsMatrix from_tensor(const Tensor& t, int item = 0);

}  // namespace tfcn
