// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// tfcn: stats | train | enhance | report | probe | synth | eval

#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "tfcn/commands.h"

int main(int argc, char** argv) {
  using namespace tfcn;
  CLI::App app{"TFCN speech enhancement"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  StatsArgs stats;
  auto* c_stats = app.add_subcommand("stats", "Per-bin LPS mean/std of the noisy files");
  c_stats->add_option("manifest", stats.manifest, "noisy<TAB>clean manifest")->required();
  c_stats->add_option("-o,--out", stats.out, "Normalizer file")->capture_default_str();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train from a run config");
  c_train->add_option("config", train.config, "Run config (JSON)")->required();
  c_train->add_flag("--resume", train.resume, "Continue from <out_dir>/last.ckpt");
  c_train->add_option("--epochs", train.epochs, "Epochs to run in this invocation (0 = all)");
  c_train->add_option("--out-dir", train.out_dir);
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--max-epochs", train.max_epochs);
  c_train->add_option("--batch-size", train.batch_size);
  c_train->add_option("--lr", train.lr);

  EnhanceArgs enh;
  auto* c_enh = app.add_subcommand("enhance", "Enhance one WAV file");
  c_enh->add_option("-c,--checkpoint", enh.checkpoint)->required();
  c_enh->add_option("-s,--stats", enh.stats)->required();
  c_enh->add_option("input", enh.input)->required();
  c_enh->add_option("output", enh.output)->required();
  c_enh->add_flag("--streaming", enh.streaming, "Frame-by-frame processing");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Parameter count, receptive field, pad plan");
  c_report->add_option("--config", report.config, "Run config (JSON)");
  c_report->add_option("--variant", report.variant, "TFCN | TFCN_D | TCN_LPS")
      ->capture_default_str();
  c_report->add_option("--causality", report.causality,
                       "non_causal | causal | semi_causal:<frames>")
      ->capture_default_str();
  c_report->add_flag("--json", report.json);

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe", "Measure look-ahead leakage of a checkpoint");
  c_probe->add_option("checkpoint", probe.checkpoint)->required();
  c_probe->add_option("-l,--look-ahead", probe.look_ahead)->capture_default_str();
  c_probe->add_option("--frames", probe.frames)->capture_default_str();
  c_probe->add_option("--trials", probe.trials)->capture_default_str();
  c_probe->add_option("--seed", probe.seed)->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a toy paired corpus");
  c_synth->add_option("out_dir", synth.out_dir)->required();
  c_synth->add_option("-n,--count", synth.count)->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--min-seconds", synth.min_seconds)->capture_default_str();
  c_synth->add_option("--max-seconds", synth.max_seconds)->capture_default_str();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Loss and segmental SNR over a manifest");
  c_eval->add_option("-c,--checkpoint", eval.checkpoint)->required();
  c_eval->add_option("-s,--stats", eval.stats)->required();
  c_eval->add_option("manifest", eval.manifest)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  spdlog::set_pattern("[%l] %v");
  return run_command(std::cerr, [&]() -> int {
    if (*c_stats) return cmd_stats(stats, std::cout, std::cerr);
    if (*c_train) return cmd_train(train, std::cout, std::cerr);
    if (*c_enh) return cmd_enhance(enh, std::cout, std::cerr);
    if (*c_report) return cmd_report(report, std::cout, std::cerr);
    if (*c_probe) return cmd_probe(probe, std::cout, std::cerr);
    if (*c_synth) return cmd_synth(synth, std::cout, std::cerr);
    return cmd_eval(eval, std::cout, std::cerr);
  });
}
