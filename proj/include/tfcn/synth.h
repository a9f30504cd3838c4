// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Toy paired corpus: harmonic, amplitude-modulated "voiced" clean signals
// and spectrally shaped noise mixed at a few fixed SNRs.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tfcn {

struct SynthOptions {
  double min_seconds = 2.0;
  double max_seconds = 6.0;
  int sample_rate = 16000;
  /// Mixing SNRs in dB, one drawn uniformly per pair.
  std::vector<int> snr_levels = {0, 5, 10, 15};
  /// Level of the steady broadband floor relative to the voiced part, dB.
  double floor_db = -25.0;
};

struct SynthPair {
  std::string name;
  int snr_db = 0;
  std::vector<float> clean;
  std::vector<float> noisy;
};

/// Pair `index` of the corpus drawn from `seed`; independent of how many
/// pairs are generated.
SynthPair synth_pair(std::uint64_t seed, int index, const SynthOptions& opt = {});

std::vector<SynthPair> synth_corpus(int count, std::uint64_t seed,
                                    const SynthOptions& opt = {});

/// 10·log10(Σ clean² / Σ (noisy − clean)²).
double measured_snr_db(const std::vector<float>& clean,
                       const std::vector<float>& noisy);

}  // namespace tfcn
