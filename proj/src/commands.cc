// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/commands.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tfcn/audio_io.h"
#include "tfcn/checkpoint.h"
#include "tfcn/config.h"
#include "tfcn/enhance.h"
#include "tfcn/synth.h"
#include "tfcn/training.h"

namespace fs = std::filesystem;

namespace tfcn {

namespace {

constexpr double kLeakTolerance = 1e-6;

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

void require_bins(const Model& model, const Normalizer& norm) {
  if (norm.bins() != model.config().freq_bins)
    throw ShapeError("normalizer has " + std::to_string(norm.bins()) +
                     " bins but the model expects " +
                     std::to_string(model.config().freq_bins));
}

Normalizer load_stats(const fs::path& path) {
  if (!fs::exists(path)) throw ResourceError("stats file not found: " + path.string());
  return read_normalizer(path);
}

Model load_checkpoint_model(const fs::path& path) {
  if (!fs::exists(path)) throw ResourceError("checkpoint not found: " + path.string());
  return load_model(path);
}

Json report_json(const ModelConfig& cfg, const StftConfig& stft) {
  const ReceptiveField rf = receptive_field(cfg);
  const PadPlan plan = plan_padding(cfg);
  Json layers = Json::array();
  for (const LayerPad& l : plan.layers)
    layers.push_back({{"layer", l.layer},
                      {"kernel", {l.kernel.freq, l.kernel.time}},
                      {"dilation", {l.dilation.freq, l.dilation.time}},
                      {"pad_freq", {l.pad.left_f, l.pad.right_f}},
                      {"pad_time", {l.pad.left_t, l.pad.right_t}},
                      {"clip", {l.clip_left, l.clip_right}}});
  return {{"variant", std::string(variant_name(cfg.variant))},
          {"causality", causality_to_string(cfg.causality)},
          {"params", param_count(cfg)},
          {"receptive_field",
           {{"past_frames", rf.past_frames},
            {"future_frames", rf.future_frames},
            {"past_ms", rf.past_frames * stft.frame_ms()},
            {"future_ms", rf.future_frames * stft.frame_ms()},
            {"freq_bins", rf.freq_span}}},
          {"look_ahead_frames", plan.future_context()},
          {"pad_plan", layers}};
}

}  // namespace

double segmental_snr_db(std::span<const float> clean, std::span<const float> test) {
  constexpr std::size_t kFrame = 512;
  constexpr std::size_t kHop = 256;
  const std::size_t n = std::min(clean.size(), test.size());
  if (n < kFrame) return 0.0;
  double total = 0.0;
  int count = 0;
  for (std::size_t start = 0; start + kFrame <= n; start += kHop) {
    double signal = 0.0;
    double error = 0.0;
    for (std::size_t i = start; i < start + kFrame; ++i) {
      const double s = clean[i];
      const double e = s - test[i];
      signal += s * s;
      error += e * e;
    }
    double snr = 10.0 * std::log10((signal + 1e-20) / (error + 1e-20));
    total += std::clamp(snr, -10.0, 35.0);
    ++count;
  }
  return total / count;
}

int cmd_stats(const StatsArgs& args, std::ostream& out, std::ostream&) {
  const std::vector<ManifestEntry> entries = read_manifest(args.manifest);
  if (entries.empty())
    throw ConfigError("manifest has no entries: " + args.manifest.string());
  std::vector<std::string> unreadable;
  NormAccumulator acc;
  for (const ManifestEntry& e : entries) {
    try {
      acc.add(lps(stft(read_wav_16k(e.noisy))));
    } catch (const ResourceError& ex) {
      unreadable.push_back(ex.what());
    }
  }
  if (!unreadable.empty()) {
    std::string msg = "unreadable files:";
    for (const std::string& u : unreadable) msg += "\n  " + u;
    throw ResourceError(msg);
  }
  if (acc.frames() == 0) throw ShapeError("no complete STFT frame in the corpus");
  write_normalizer(args.out, acc.finish());
  out << "stats: " << entries.size() << " files, " << acc.frames()
      << " frames -> " << args.out.string() << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream&) {
  RunConfig rc = RunConfig::load(args.config);
  if (args.out_dir) rc.paths.out_dir = *args.out_dir;
  if (args.seed) rc.seed = *args.seed;
  if (args.max_epochs) rc.train.max_epochs = *args.max_epochs;
  if (args.batch_size) rc.train.batch_size = *args.batch_size;
  if (args.lr) rc.train.initial_lr = *args.lr;
  if (args.epochs < 0) throw ConfigError("--epochs must be >= 0");
  rc.train.seed = rc.seed;
  rc.model.validate();
  rc.stft.validate();
  rc.train.validate(rc.stft.hop);
  if (rc.stft.lps_bins() != rc.model.freq_bins)
    throw ConfigError("model.freq_bins must equal stft.frame_len / 2");

  const fs::path base = args.config.parent_path();
  const fs::path out_dir = resolve(base, rc.paths.out_dir);
  const Normalizer norm = load_stats(resolve(base, rc.paths.stats));
  Dataset data;
  data.train = load_corpus(resolve(base, rc.paths.train_manifest));
  data.valid = load_corpus(resolve(base, rc.paths.valid_manifest));

  TrainState state;
  Model model = build_model(rc.model, rc.seed);
  const fs::path last = out_dir / "last.ckpt";
  if (args.resume && fs::exists(last)) {
    const Checkpoint ckpt = read_checkpoint(last);
    if (!(ckpt.config == rc.model) || ckpt.seed != rc.seed)
      throw CheckpointError(last.string() + " was written for a different model or seed");
    model = restore_model(ckpt);
    state = restore_train_state(ckpt, model);
    out << "resuming after epoch " << state.epochs_done << "\n";
  }
  require_bins(model, norm);
  if (state.stopped) {
    out << "training already finished\n";
    return kExitOk;
  }

  fs::create_directories(out_dir);
  RunConfig resolved = rc;
  resolved.save(out_dir / "run.json");

  TrainOptions options;
  options.out_dir = out_dir;
  options.epoch_limit = args.epochs;
  options.on_epoch = [&out](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train " << fmt("%.6f", r.train_loss)
        << " val " << fmt("%.6f", r.val_loss) << " lr " << fmt("%.6g", r.lr);
    if (r.event != ScheduleEvent::kNone) out << " " << event_name(r.event);
    out << "\n";
    return true;
  };
  train(model, data, norm, rc.train, state, options, rc.stft);
  out << "done: " << state.epochs_done << " epochs, best val "
      << fmt("%.6f", state.schedule.best_val_loss)
      << (state.stopped ? " (finished)" : "") << "\n";
  return kExitOk;
}

int cmd_enhance(const EnhanceArgs& args, std::ostream& out, std::ostream& err) {
  Model model = load_checkpoint_model(args.checkpoint);
  const Normalizer norm = load_stats(args.stats);
  require_bins(model, norm);
  const Waveform noisy = read_wav_16k(args.input);
  const StftConfig cfg;
  if (cfg.frames(noisy.samples.size()) == 0)
    throw ShapeError(args.input.string() + " is shorter than one frame");

  Waveform result;
  if (args.streaming) {
    StreamingEnhancer se(model, norm, cfg);
    result.samples = se.push(noisy.samples);
    const std::vector<float> tail = se.finish();
    result.samples.insert(result.samples.end(), tail.begin(), tail.end());
  } else {
    result = enhance(model, norm, noisy.samples, cfg);
  }
  const float gain = peak_normalize(result.samples);
  if (gain != 1.0f)
    err << "warning: output would clip; scaled by " << fmt("%.4f", gain) << "\n";
  write_wav(args.output, result);
  out << "enhanced " << args.input.string() << " -> " << args.output.string()
      << " (" << result.samples.size() << " samples, look-ahead "
      << model.pad_plan().future_context() << " frames)\n";
  return kExitOk;
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream&) {
  ModelConfig cfg;
  StftConfig stft;
  if (args.config) {
    const RunConfig rc = RunConfig::load(*args.config);
    cfg = rc.model;
    stft = rc.stft;
  } else {
    cfg = ModelConfig::preset(parse_variant(args.variant));
    cfg.causality = parse_causality(args.causality);
  }
  cfg.validate();
  const Json j = report_json(cfg, stft);
  if (args.json) {
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  const auto& rf = j["receptive_field"];
  out << "variant      " << j["variant"].get<std::string>() << "\n"
      << "causality    " << j["causality"].get<std::string>() << "\n"
      << "parameters   " << j["params"].get<std::size_t>() << "\n"
      << "receptive    past " << rf["past_frames"].get<int>() << " frames ("
      << rf["past_ms"].get<double>() << " ms), future "
      << rf["future_frames"].get<int>() << " frames ("
      << rf["future_ms"].get<double>() << " ms), "
      << "freq span " << rf["freq_bins"].get<int>() << "\n"
      << "pad plan (freq lo/hi, time lo/hi):\n";
  for (const auto& l : j["pad_plan"]) {
    char line[160];
    std::snprintf(line, sizeof(line), "  %-22s k %dx%d d %dx%d  f %d/%d  t %d/%d\n",
                  l["layer"].get<std::string>().c_str(), l["kernel"][0].get<int>(),
                  l["kernel"][1].get<int>(), l["dilation"][0].get<int>(),
                  l["dilation"][1].get<int>(), l["pad_freq"][0].get<int>(),
                  l["pad_freq"][1].get<int>(), l["pad_time"][0].get<int>(),
                  l["pad_time"][1].get<int>());
    out << line;
  }
  return kExitOk;
}

int cmd_probe(const ProbeArgs& args, std::ostream& out, std::ostream& err) {
  if (args.look_ahead < 0 || args.trials < 1)
    throw ConfigError("probe: look-ahead must be >= 0 and trials >= 1");
  Model model = load_checkpoint_model(args.checkpoint);
  const ProbeResult r =
      probe_causality(model, args.frames, args.look_ahead, args.trials, args.seed);
  const bool pass = r.max_leak <= kLeakTolerance;
  out << "probe look-ahead " << args.look_ahead << " frames, " << r.trials
      << " trials: max leak " << fmt("%.3g", r.max_leak) << " "
      << (pass ? "PASS" : "LEAK") << "\n";
  if (!pass) {
    err << "causality violated: outputs depend on input more than "
        << args.look_ahead << " frames ahead\n";
    return kExitContract;
  }
  return kExitOk;
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream&) {
  if (args.count < 0) throw ConfigError("synth: count must be >= 0");
  if (args.min_seconds <= 0.0 || args.max_seconds < args.min_seconds)
    throw ConfigError("synth: need 0 < min-seconds <= max-seconds");
  fs::create_directories(args.out_dir);
  SynthOptions opt;
  opt.min_seconds = args.min_seconds;
  opt.max_seconds = args.max_seconds;
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < args.count; ++i) {
    const SynthPair p = synth_pair(args.seed, i, opt);
    const std::string stem =
        p.name + "_snr" + (p.snr_db < 10 ? "0" : "") + std::to_string(p.snr_db);
    write_wav(args.out_dir / (stem + "_noisy.wav"), {p.noisy, kSampleRate});
    write_wav(args.out_dir / (stem + "_clean.wav"), {p.clean, kSampleRate});
    entries.push_back({stem + "_noisy.wav", stem + "_clean.wav"});
  }
  write_manifest(args.out_dir / "manifest.tsv", entries);
  out << "synth: " << args.count << " pairs -> "
      << (args.out_dir / "manifest.tsv").string() << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream&) {
  Model model = load_checkpoint_model(args.checkpoint);
  const Normalizer norm = load_stats(args.stats);
  require_bins(model, norm);
  const std::vector<Utterance> corpus = load_corpus(args.manifest);
  if (corpus.empty()) throw ConfigError("manifest has no entries: " + args.manifest.string());

  double loss_sum = 0.0;
  double before_sum = 0.0;
  double after_sum = 0.0;
  for (const Utterance& u : corpus) {
    const double loss = evaluate_loss(model, std::span(&u, 1), norm);
    const Waveform enhanced = enhance(model, norm, u.noisy);
    const double before = segmental_snr_db(u.clean, u.noisy);
    const double after = segmental_snr_db(u.clean, enhanced.samples);
    out << u.name << "  loss " << fmt("%.6f", loss) << "  segSNR "
        << fmt("%.2f", before) << " -> " << fmt("%.2f", after) << " dB\n";
    loss_sum += loss;
    before_sum += before;
    after_sum += after;
  }
  const double n = static_cast<double>(corpus.size());
  out << "mean loss " << fmt("%.6f", loss_sum / n) << "  segSNR improvement "
      << fmt("%.2f", (after_sum - before_sum) / n) << " dB over " << corpus.size()
      << " files\n";
  return kExitOk;
}

int run_command(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ResourceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingResource;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitContract;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingResource;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitContract;
  }
}

}  // namespace tfcn
