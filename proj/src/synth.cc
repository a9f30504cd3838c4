// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "tfcn/network.h"

namespace tfcn {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double power(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

}  // namespace

SynthPair synth_pair(std::uint64_t seed, int index, const SynthOptions& opt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  const double fs = opt.sample_rate;
  const double seconds = range(opt.min_seconds, opt.max_seconds);
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));

  // Voiced source: drifting f0, harmonics shaped by two formant bumps, and
  // a syllable-rate envelope with pauses.
  const double f0 = range(90.0, 240.0);
  const double vibrato = range(2.0, 6.0);
  const double syllable_rate = range(2.5, 6.0);
  const double f1 = range(400.0, 900.0);
  const double f2 = range(1200.0, 2600.0);
  const double phase0 = range(0.0, kTwoPi);
  const int harmonics = std::max(1, static_cast<int>(3800.0 / f0));
  std::vector<double> amp(harmonics);
  for (int h = 0; h < harmonics; ++h) {
    const double f = f0 * (h + 1);
    amp[h] = std::exp(-std::pow((f - f1) / 250.0, 2)) +
             0.6 * std::exp(-std::pow((f - f2) / 400.0, 2)) + 0.05 / (h + 1);
  }

  // A steady comb with one partial per analysis bin (period 512 samples)
  // fills the valleys between harmonics while staying deterministic frame
  // to frame.
  constexpr int kPeriod = 512;
  std::vector<double> comb(kPeriod, 0.0);
  for (int k = 1; k < kPeriod / 2; ++k) {
    const double phi = range(0.0, kTwoPi);
    for (int i = 0; i < kPeriod; ++i)
      comb[i] += std::cos(kTwoPi * k * i / kPeriod + phi);
  }

  std::vector<double> clean(n);
  std::vector<double> floor(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / fs;
    phase += kTwoPi * f0 * (1.0 + 0.03 * std::sin(kTwoPi * vibrato * t)) / fs;
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h) v += amp[h] * std::sin((h + 1) * phase);
    const double env =
        0.3 + 0.7 * std::max(0.0, std::sin(kTwoPi * syllable_rate * t + phase0));
    clean[i] = v * std::sqrt(env);
    floor[i] = comb[i % kPeriod] * std::sqrt(env);
  }
  const double floor_gain = std::sqrt(std::pow(10.0, opt.floor_db / 10.0) * power(clean) /
                                      power(floor));
  for (std::size_t i = 0; i < n; ++i) clean[i] += floor_gain * floor[i];

  // Shaped noise: white Gaussian through a one-pole low-pass blended with
  // its high-passed residual, with a random tilt.
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double pole = range(0.5, 0.95);
  const double tilt = range(0.2, 0.8);
  std::vector<double> noise(n);
  double lp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = gauss(rng);
    lp = pole * lp + (1.0 - pole) * w;
    noise[i] = tilt * lp * 4.0 + (1.0 - tilt) * (w - lp);
  }

  if (opt.snr_levels.empty()) throw ConfigError("synth: no SNR levels");
  SynthPair pair;
  pair.snr_db = opt.snr_levels[std::uniform_int_distribution<std::size_t>(
      0, opt.snr_levels.size() - 1)(rng)];
  char name[32];
  std::snprintf(name, sizeof(name), "synth_%04d", index);
  pair.name = name;

  const double pc = power(clean);
  const double pn = power(noise);
  const double noise_gain =
      pn > 0.0 ? std::sqrt(pc / (pn * std::pow(10.0, pair.snr_db / 10.0))) : 0.0;
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    noise[i] *= noise_gain;
    peak = std::max({peak, std::abs(clean[i]), std::abs(clean[i] + noise[i])});
  }
  const double gain = peak > 0.0 ? 0.5 / peak : 0.0;
  pair.clean.resize(n);
  pair.noisy.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    pair.clean[i] = static_cast<float>(clean[i] * gain);
    pair.noisy[i] = static_cast<float>((clean[i] + noise[i]) * gain);
  }
  return pair;
}

std::vector<SynthPair> synth_corpus(int count, std::uint64_t seed,
                                    const SynthOptions& opt) {
  std::vector<SynthPair> out;
  for (int i = 0; i < count; ++i) out.push_back(synth_pair(seed, i, opt));
  return out;
}

double measured_snr_db(const std::vector<float>& clean,
                       const std::vector<float>& noisy) {
  double s = 0.0;
  double e = 0.0;
  for (std::size_t i = 0; i < clean.size() && i < noisy.size(); ++i) {
    s += double(clean[i]) * clean[i];
    const double d = double(noisy[i]) - clean[i];
    e += d * d;
  }
  return 10.0 * std::log10(s / e);
}

}  // namespace tfcn
