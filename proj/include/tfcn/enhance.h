// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Whole-utterance enhancement and its frame-by-frame streaming counterpart.
// Streaming runs every convolution on just the frames its taps touch, with
// the direct algorithm, so each output value goes through the same
// arithmetic as in the batch pass and the two agree bit for bit.

#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <vector>

#include "tfcn/dsp.h"
#include "tfcn/network.h"

namespace tfcn {

/// STFT → LPS → normalise → network → denormalise → noisy phase (the last
/// bin gets zero magnitude) → ISTFT. Output has hop·(T−1) + frame_len
/// samples; no level adjustment. The model is switched to inference mode.
Waveform enhance(Model& model, const Normalizer& norm,
                 std::span<const float> noisy, const StftConfig& cfg = {});

/// Scales `samples` so the peak is 0.99 when it would otherwise clip.
/// Returns the gain applied (1 when untouched).
float peak_normalize(std::vector<float>& samples);

/// Frame-synchronous inference. Each pushed frame is one normalised LPS
/// frame (freq_bins values); outputs come back in order as soon as their
/// look-ahead is available.
class StreamingNetwork {
 public:
  explicit StreamingNetwork(const Model& model);
  ~StreamingNetwork();
  StreamingNetwork(StreamingNetwork&&) noexcept;
  StreamingNetwork& operator=(StreamingNetwork&&) noexcept;

  std::vector<std::vector<float>> push(std::span<const float> frame);
  /// Ends the stream: the right-hand zero padding is fed in and the
  /// remaining frames are returned.
  std::vector<std::vector<float>> flush();

  /// Input frames beyond t needed for output t.
  int look_ahead() const;
  std::int64_t frames_in() const;
  std::int64_t frames_out() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Samples in, enhanced samples out. Output samples are released once no
/// later frame overlaps them.
class StreamingEnhancer {
 public:
  StreamingEnhancer(const Model& model, const Normalizer& norm,
                    const StftConfig& cfg = {});

  std::vector<float> push(std::span<const float> samples);
  std::vector<float> finish();

  std::int64_t frames_in() const { return net_.frames_in(); }
  std::int64_t frames_out() const { return net_.frames_out(); }

 private:
  std::vector<float> emit(std::vector<std::vector<float>> frames, bool last);

  StftConfig cfg_;
  Normalizer norm_;
  StreamingNetwork net_;
  FrameTransform fft_;
  std::vector<float> pending_;            // input not yet framed
  std::deque<std::vector<std::complex<float>>> noisy_;  // awaiting output
  std::vector<float> overlap_;            // overlap-add tail
  std::int64_t released_frames_ = 0;
};

}  // namespace tfcn
