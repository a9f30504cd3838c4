// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// RIFF PCM16 mono WAV, a 64-tap windowed-sinc resampler, the normalizer
// file and the corpus manifest.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tfcn/dsp.h"
#include "tfcn/tensor.h"
#include "tfcn/training.h"

namespace tfcn {

/// Samples are k/32768 for the stored 16-bit values k.
Waveform read_wav(const std::filesystem::path& path);
/// Rounds to the nearest 16-bit value after clamping to [-1, 32767/32768].
void write_wav(const std::filesystem::path& path, const Waveform& wave);
/// The sample values a PCM16 write-then-read would return.
float quantize_pcm16(float x);

/// Windowed-sinc (64 taps, Blackman) rate conversion, anti-aliased when
/// downsampling. Output length is floor(n · to / from).
std::vector<float> resample(std::span<const float> x, int from_rate, int to_rate);

/// Reads a WAV and converts it to 16 kHz when needed.
Waveform read_wav_16k(const std::filesystem::path& path);

/// "TFCNNORM", u32 version, u32 bins, then U and V as float32.
void write_normalizer(const std::filesystem::path& path, const Normalizer& n);
Normalizer read_normalizer(const std::filesystem::path& path);

struct ManifestEntry {
  std::filesystem::path noisy;
  std::filesystem::path clean;
};

/// Text manifest: one "noisy<TAB>clean" pair per line, paths relative to
/// the manifest's directory; blank lines and '#' comments are ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);

/// Loads every pair at 16 kHz. All unreadable files are collected into a
/// single ResourceError; a pair whose lengths differ is a ShapeError.
std::vector<Utterance> load_corpus(const std::filesystem::path& manifest);

}  // namespace tfcn
