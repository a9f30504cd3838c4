// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Frame-RMS LPS loss, Adam, the plateau learning-rate schedule with early
// stopping, fixed-length segment batching and the training loop.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfcn/dsp.h"
#include "tfcn/network.h"

namespace tfcn {

struct TrainConfig {
  double initial_lr = 1e-3;
  int lr_halving_patience = 3;
  int early_stop_patience = 10;
  int max_epochs = 100;
  int segment_samples = 32000;
  int batch_size = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  /// Throws ConfigError. `hop` is the STFT hop segments must align to.
  void validate(int hop = 256) const;
  bool operator==(const TrainConfig&) const = default;
};

/// Mean over the first `valid_frames` frames (all when negative) of the
/// per-frame RMS difference across bins.
double lps_loss(const LpsMatrix& target, const LpsMatrix& estimate,
                int valid_frames = -1);

/// ∂loss/∂estimate: (Ŝ − S) / (T·F·RMS_t) with RMS floored at 1e-8; zero on
/// masked frames.
LpsMatrix lps_loss_gradient(const LpsMatrix& target, const LpsMatrix& estimate,
                            int valid_frames = -1);

/// Batch loss on (batch, 1, bins, frames) tensors: mean over items of the
/// per-item loss. When `grad` is non-null it receives ∂loss/∂estimate.
template <typename T>
double batch_loss(const BasicTensor<T>& target, const BasicTensor<T>& estimate,
                  std::span<const int> valid_frames,
                  BasicTensor<T>* grad = nullptr);

/// Ŝ = out·V + U, bin by bin.
template <typename T>
BasicTensor<T> denormalize_output(const BasicTensor<T>& out,
                                  const Normalizer& norm);

/// Loss of the denormalised network output for one batch. With `backward`
/// the forward pass is recorded and parameter gradients are accumulated
/// (after zeroing); the model's normalisation mode is left as is.
template <typename T>
double network_loss(Network<T>& model, const BasicTensor<T>& noisy,
                    const BasicTensor<T>& clean,
                    std::span<const int> valid_frames, const Normalizer& norm,
                    bool backward);

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  /// One bias-corrected update. A non-finite gradient rejects the whole
  /// step (parameters, moments and counter untouched) and returns false.
  bool step(std::span<ParamRef<float>> params, double lr, AdamState& state) const;

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
};

enum class ScheduleEvent { kNone, kHalve, kStop };

std::string_view event_name(ScheduleEvent e);

struct ScheduleState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  int epochs_above_best_consecutive = 0;
  double current_lr = 1e-3;
};

/// A strictly lower loss is a new best and resets both counters. Otherwise
/// both advance; `early_stop_patience` epochs since the best stops, and
/// `lr_halving_patience` consecutive ones halve the rate and reset the
/// consecutive counter.
ScheduleEvent schedule_update(ScheduleState& state, double val_loss,
                              const TrainConfig& cfg);

/// A noisy/clean pair at 16 kHz.
struct Utterance {
  std::string name;
  std::vector<float> noisy;
  std::vector<float> clean;
};

struct Segment {
  int utterance = 0;
  std::size_t offset = 0;
  int valid_samples = 0;
  /// Frames lying entirely inside the valid samples; the rest are masked.
  int valid_frames = 0;
};

/// Non-overlapping fixed-length segments. A tail shorter than one frame is
/// dropped; a longer tail becomes a zero-padded segment with a frame mask.
std::vector<Segment> segment_corpus(std::span<const Utterance> corpus,
                                    const TrainConfig& cfg,
                                    const StftConfig& stft_cfg = {});

/// Permutation of [0, count) for one epoch, derived from (seed, epoch) only.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed,
                                     int epoch);

struct Batch {
  Tensor noisy;   // normalised noisy LPS
  Tensor clean;   // clean LPS
  std::vector<int> valid_frames;
};

Batch make_batch(std::span<const Utterance> corpus,
                 std::span<const Segment> segments,
                 std::span<const std::size_t> picks, const Normalizer& norm,
                 const TrainConfig& cfg, const StftConfig& stft_cfg = {});

/// LPS features of a whole utterance: normalised noisy input, clean target.
Batch utterance_features(const Utterance& u, const Normalizer& norm,
                         const StftConfig& stft_cfg = {});

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  ScheduleEvent event = ScheduleEvent::kNone;
  std::int64_t steps = 0;  // optimizer steps taken so far
};

struct TrainState {
  int epochs_done = 0;
  ScheduleState schedule;
  AdamState adam;
  std::vector<EpochRecord> history;
  bool stopped = false;
};

struct Dataset {
  std::vector<Utterance> train;
  std::vector<Utterance> valid;
};

struct TrainOptions {
  /// Directory receiving best.ckpt, last.ckpt and history.csv; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  /// Stop after this many epochs in this call (0 = until the schedule or
  /// max_epochs ends training).
  int epoch_limit = 0;
  /// Called after every epoch; returning false ends training.
  std::function<bool(const EpochRecord&)> on_epoch;
};

/// Loss of denormalised network output (Ŝ = out·V + U) against clean LPS,
/// one utterance at a time in inference mode; mean over utterances.
double evaluate_loss(Model& model, std::span<const Utterance> corpus,
                     const Normalizer& norm, const StftConfig& stft_cfg = {});

/// Trains from `state` (fresh or resumed). Segment order depends only on
/// (seed, epoch), so a resumed run continues the original trajectory.
void train(Model& model, const Dataset& data, const Normalizer& norm,
           const TrainConfig& cfg, TrainState& state,
           const TrainOptions& options = {}, const StftConfig& stft_cfg = {});

void write_history_csv(const std::filesystem::path& path,
                       std::span<const EpochRecord> history);

}  // namespace tfcn
