// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// The command-line verbs as functions. Each returns a process exit code and
// writes human-readable output to `out`, diagnostics to `err`.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>

namespace tfcn {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitMissingResource = 2,
  kExitContract = 3,
};

struct StatsArgs {
  std::filesystem::path manifest;
  std::filesystem::path out = "stats.norm";
};
int cmd_stats(const StatsArgs& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::filesystem::path config;
  /// Continue from <out_dir>/last.ckpt when present.
  bool resume = false;
  /// Stop after this many epochs in this invocation (0 = no limit).
  int epochs = 0;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EnhanceArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path stats;
  std::filesystem::path input;
  std::filesystem::path output;
  /// Frame-by-frame processing instead of one whole-utterance pass.
  bool streaming = false;
};
int cmd_enhance(const EnhanceArgs& args, std::ostream& out, std::ostream& err);

struct ReportArgs {
  /// A run config, or else the variant/causality pair below.
  std::optional<std::filesystem::path> config;
  std::string variant = "TFCN";
  std::string causality = "non_causal";
  bool json = false;
};
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err);

struct ProbeArgs {
  std::filesystem::path checkpoint;
  int look_ahead = 0;
  int frames = 64;
  int trials = 8;
  std::uint64_t seed = 0;
};
/// Exit code 3 when the measured leak exceeds 1e-6.
int cmd_probe(const ProbeArgs& args, std::ostream& out, std::ostream& err);

struct SynthArgs {
  std::filesystem::path out_dir;
  int count = 8;
  std::uint64_t seed = 0;
  double min_seconds = 2.0;
  double max_seconds = 6.0;
};
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path stats;
  std::filesystem::path manifest;
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

/// Mean over 512-sample frames (hop 256) of 10·log10(Σs² / Σ(s − y)²),
/// each clamped to [−10, 35] dB, over the common length.
double segmental_snr_db(std::span<const float> clean, std::span<const float> test);

/// Runs `body`, mapping library exceptions onto exit codes.
int run_command(std::ostream& err, const std::function<int()>& body);

}  // namespace tfcn
