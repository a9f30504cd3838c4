// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/audio_io.h"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace tfcn {

static_assert(std::endian::native == std::endian::little,
              "file I/O assumes a little-endian host");

namespace {

constexpr char kNormMagic[8] = {'T', 'F', 'C', 'N', 'N', 'O', 'R', 'M'};
constexpr std::uint32_t kNormVersion = 1;
constexpr int kResampleTaps = 64;

template <typename T>
T read_le(const std::string& buf, std::size_t at) {
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::int16_t to_pcm(float x) {
  const double v = std::nearbyint(double(x) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

}  // namespace

float quantize_pcm16(float x) { return to_pcm(x) / 32768.0f; }

Waveform read_wav(const std::filesystem::path& path) {
  const std::string buf = read_all(path);
  const std::string where = path.string();
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 ||
      buf.compare(8, 4, "WAVE") != 0)
    throw ResourceError(where + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  int rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id = buf.substr(pos, 4);
    const auto size = read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size())
      throw ResourceError(where + ": chunk '" + id + "' runs past end of file");
    if (id == "fmt ") {
      if (size < 16) throw ResourceError(where + ": short fmt chunk");
      const auto format = read_le<std::uint16_t>(buf, body);
      const auto channels = read_le<std::uint16_t>(buf, body + 2);
      rate = static_cast<int>(read_le<std::uint32_t>(buf, body + 4));
      const auto bits = read_le<std::uint16_t>(buf, body + 14);
      if (format != 1 || bits != 16)
        throw ResourceError(where + ": only 16-bit PCM is supported (format " +
                            std::to_string(format) + ", " +
                            std::to_string(bits) + " bits)");
      if (channels != 1)
        throw ResourceError(where + ": expected mono, found " +
                            std::to_string(channels) + " channels");
      if (rate <= 0) throw ResourceError(where + ": invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ResourceError(where + ": data chunk before fmt");
      if (size % 2 != 0) throw ResourceError(where + ": odd data chunk size");
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = read_le<std::int16_t>(buf, body + 2 * i) / 32768.0f;
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw ResourceError(where + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ResourceError("cannot write " + path.string());
  const auto bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  put<std::uint32_t>(out, 36 + bytes);
  out.write("WAVEfmt ", 8);
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);
  put<std::uint16_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  out.write("data", 4);
  put<std::uint32_t>(out, bytes);
  for (float x : wave.samples) put<std::int16_t>(out, to_pcm(x));
  if (!out) throw ResourceError("short write to " + path.string());
}

std::vector<float> resample(std::span<const float> x, int from_rate,
                            int to_rate) {
  if (from_rate <= 0 || to_rate <= 0)
    throw ConfigError("resample: rates must be positive");
  if (from_rate == to_rate) return {x.begin(), x.end()};
  const double ratio = double(to_rate) / from_rate;
  const double cutoff = 0.95 * std::min(1.0, ratio);  // of the input Nyquist
  const auto n_out = static_cast<std::size_t>(x.size() * ratio);
  const int half = kResampleTaps / 2;
  std::vector<float> y(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = n / ratio;
    const auto center = static_cast<long>(std::floor(t));
    double acc = 0.0;
    double norm = 0.0;
    for (long k = center - half + 1; k <= center + half; ++k) {
      const double d = t - k;
      const double u = d / half;  // in (-1, 1]
      if (std::abs(u) >= 1.0) continue;
      const double a = std::numbers::pi * (u + 1.0);
      const double window = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2 * a);
      const double arg = std::numbers::pi * cutoff * d;
      const double sinc = d == 0.0 ? 1.0 : std::sin(arg) / arg;
      const double h = cutoff * sinc * window;
      norm += h;
      if (k >= 0 && k < static_cast<long>(x.size())) acc += h * x[k];
    }
    y[n] = static_cast<float>(norm != 0.0 ? acc / norm : 0.0);
  }
  return y;
}

Waveform read_wav_16k(const std::filesystem::path& path) {
  Waveform w = read_wav(path);
  if (w.sample_rate != kSampleRate) {
    w.samples = resample(w.samples, w.sample_rate, kSampleRate);
    w.sample_rate = kSampleRate;
  }
  return w;
}

void write_normalizer(const std::filesystem::path& path, const Normalizer& n) {
  if (n.mean.size() != n.stddev.size())
    throw ShapeError("normalizer mean and stddev sizes differ");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ResourceError("cannot write " + path.string());
  out.write(kNormMagic, sizeof(kNormMagic));
  put<std::uint32_t>(out, kNormVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(n.bins()));
  out.write(reinterpret_cast<const char*>(n.mean.data()),
            static_cast<std::streamsize>(n.mean.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(n.stddev.data()),
            static_cast<std::streamsize>(n.stddev.size() * sizeof(float)));
  if (!out) throw ResourceError("short write to " + path.string());
}

Normalizer read_normalizer(const std::filesystem::path& path) {
  const std::string buf = read_all(path);
  const std::string where = path.string();
  if (buf.size() < 16 || std::memcmp(buf.data(), kNormMagic, 8) != 0)
    throw ResourceError(where + ": not a normalizer file");
  const auto version = read_le<std::uint32_t>(buf, 8);
  if (version != kNormVersion)
    throw ResourceError(where + ": unsupported normalizer version " +
                        std::to_string(version));
  const auto bins = read_le<std::uint32_t>(buf, 12);
  if (buf.size() != 16 + 8 * std::size_t(bins))
    throw ResourceError(where + ": size does not match " +
                        std::to_string(bins) + " bins");
  Normalizer n;
  n.mean.resize(bins);
  n.stddev.resize(bins);
  std::memcpy(n.mean.data(), buf.data() + 16, 4 * std::size_t(bins));
  std::memcpy(n.stddev.data(), buf.data() + 16 + 4 * std::size_t(bins),
              4 * std::size_t(bins));
  return n;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw ResourceError(path.string() + ":" + std::to_string(line_no) +
                          ": expected 'noisy<TAB>clean'");
    out.push_back({base / line.substr(0, tab), base / line.substr(tab + 1)});
  }
  return out;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << "# noisy\tclean\n";
  for (const auto& e : entries)
    out << e.noisy.generic_string() << '\t' << e.clean.generic_string() << '\n';
}

std::vector<Utterance> load_corpus(const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  std::vector<Utterance> out;
  std::vector<std::string> failures;
  for (const auto& e : entries) {
    Utterance u;
    u.name = e.noisy.stem().string();
    try {
      u.noisy = read_wav_16k(e.noisy).samples;
    } catch (const ResourceError& err) {
      failures.push_back(err.what());
    }
    try {
      u.clean = read_wav_16k(e.clean).samples;
    } catch (const ResourceError& err) {
      failures.push_back(err.what());
    }
    out.push_back(std::move(u));
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " unreadable file(s):";
    for (const auto& f : failures) msg += "\n  " + f;
    throw ResourceError(msg);
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].noisy.size() != out[i].clean.size())
      throw ShapeError("pair " + entries[i].noisy.string() + " / " +
                       entries[i].clean.string() + ": " +
                       std::to_string(out[i].noisy.size()) + " vs " +
                       std::to_string(out[i].clean.size()) + " samples");
  return out;
}

}  // namespace tfcn
