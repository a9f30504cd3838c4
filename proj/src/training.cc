// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "tfcn/checkpoint.h"

namespace tfcn {

namespace {

constexpr double kRmsFloor = 1e-8;

void require_pair(const LpsMatrix& a, const LpsMatrix& b) {
  if (a.frames != b.frames || a.bins != b.bins)
    throw ShapeError("loss: target is " + std::to_string(a.frames) + "x" +
                     std::to_string(a.bins) + " but estimate is " +
                     std::to_string(b.frames) + "x" + std::to_string(b.bins));
}

int clamp_frames(int valid, int frames) {
  return valid < 0 ? frames : std::min(valid, frames);
}

}  // namespace

void TrainConfig::validate(int hop) const {
  auto fail = [](const std::string& msg) { throw ConfigError("train." + msg); };
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr))
    fail("initial_lr must be positive");
  if (lr_halving_patience < 1) fail("lr_halving_patience must be >= 1");
  if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (segment_samples <= 0 || hop <= 0 || segment_samples % hop != 0)
    fail("segment_samples must be a positive multiple of the hop (" +
         std::to_string(hop) + "), got " + std::to_string(segment_samples));
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    fail("adam_betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be positive");
}

double lps_loss(const LpsMatrix& target, const LpsMatrix& estimate,
                int valid_frames) {
  require_pair(target, estimate);
  const int frames = clamp_frames(valid_frames, target.frames);
  if (frames == 0) return 0.0;
  double total = 0.0;
  for (int t = 0; t < frames; ++t) {
    double sq = 0.0;
    for (int j = 0; j < target.bins; ++j) {
      const double d = double(estimate.at(t, j)) - target.at(t, j);
      sq += d * d;
    }
    total += std::sqrt(sq / target.bins);
  }
  return total / frames;
}

LpsMatrix lps_loss_gradient(const LpsMatrix& target, const LpsMatrix& estimate,
                            int valid_frames) {
  require_pair(target, estimate);
  LpsMatrix grad(target.frames, target.bins);
  const int frames = clamp_frames(valid_frames, target.frames);
  const double f = target.bins;
  for (int t = 0; t < frames; ++t) {
    double sq = 0.0;
    for (int j = 0; j < target.bins; ++j) {
      const double d = double(estimate.at(t, j)) - target.at(t, j);
      sq += d * d;
    }
    const double rms = std::max(std::sqrt(sq / f), kRmsFloor);
    const double scale = 1.0 / (frames * f * rms);
    for (int j = 0; j < target.bins; ++j)
      grad.at(t, j) = static_cast<float>(
          (double(estimate.at(t, j)) - target.at(t, j)) * scale);
  }
  return grad;
}

template <typename T>
double batch_loss(const BasicTensor<T>& target, const BasicTensor<T>& estimate,
                  std::span<const int> valid_frames, BasicTensor<T>* grad) {
  require_same_shape(target.shape(), estimate.shape(), "batch_loss");
  const Shape s = target.shape();
  if (s.channels != 1)
    throw ShapeError("batch_loss expects one channel, got " + s.str());
  if (valid_frames.size() != static_cast<std::size_t>(s.batch))
    throw ShapeError("batch_loss: " + std::to_string(valid_frames.size()) +
                     " frame masks for a batch of " + std::to_string(s.batch));
  if (grad) *grad = BasicTensor<T>(s);
  if (s.batch == 0) return 0.0;

  double total = 0.0;
  std::vector<double> rms(s.time);
  for (int n = 0; n < s.batch; ++n) {
    const int frames = clamp_frames(valid_frames[n], s.time);
    if (frames == 0) continue;
    std::fill(rms.begin(), rms.end(), 0.0);
    for (int f = 0; f < s.freq; ++f)
      for (int t = 0; t < frames; ++t) {
        const double d = double(estimate(n, 0, f, t)) - target(n, 0, f, t);
        rms[t] += d * d;
      }
    double item = 0.0;
    for (int t = 0; t < frames; ++t) {
      rms[t] = std::sqrt(rms[t] / s.freq);
      item += rms[t];
    }
    total += item / frames;
    if (!grad) continue;
    for (int f = 0; f < s.freq; ++f)
      for (int t = 0; t < frames; ++t) {
        const double d = double(estimate(n, 0, f, t)) - target(n, 0, f, t);
        (*grad)(n, 0, f, t) = static_cast<T>(
            d / (double(s.batch) * frames * s.freq *
                 std::max(rms[t], kRmsFloor)));
      }
  }
  return total / s.batch;
}

template <typename T>
BasicTensor<T> denormalize_output(const BasicTensor<T>& out,
                                  const Normalizer& norm) {
  BasicTensor<T> est(out.shape());
  const Shape s = out.shape();
  if (s.freq != norm.bins())
    throw ShapeError("normalizer has " + std::to_string(norm.bins()) +
                     " bins, network output has " + std::to_string(s.freq));
  for (int n = 0; n < s.batch; ++n)
    for (int f = 0; f < s.freq; ++f)
      for (int t = 0; t < s.time; ++t)
        est(n, 0, f, t) = out(n, 0, f, t) * T(norm.stddev[f]) + T(norm.mean[f]);
  return est;
}

template <typename T>
double network_loss(Network<T>& model, const BasicTensor<T>& noisy,
                    const BasicTensor<T>& clean,
                    std::span<const int> valid_frames, const Normalizer& norm,
                    bool backward) {
  const BasicTensor<T> out =
      model.forward(noisy, backward ? Recording::kOn : Recording::kOff);
  if (!backward)
    return batch_loss(clean, denormalize_output(out, norm), valid_frames);
  BasicTensor<T> grad;
  const double loss =
      batch_loss(clean, denormalize_output(out, norm), valid_frames, &grad);
  if (!std::isfinite(loss)) return loss;
  const Shape s = grad.shape();
  for (int n = 0; n < s.batch; ++n)
    for (int f = 0; f < s.freq; ++f)
      for (int t = 0; t < s.time; ++t) grad(n, 0, f, t) *= T(norm.stddev[f]);
  model.zero_grad();
  model.backward(grad);
  return loss;
}

#define TFCN_INSTANTIATE(T)                                                   \
  template double batch_loss(const BasicTensor<T>&, const BasicTensor<T>&,    \
                             std::span<const int>, BasicTensor<T>*);          \
  template BasicTensor<T> denormalize_output(const BasicTensor<T>&,           \
                                             const Normalizer&);              \
  template double network_loss(Network<T>&, const BasicTensor<T>&,            \
                               const BasicTensor<T>&, std::span<const int>,   \
                               const Normalizer&, bool);
TFCN_INSTANTIATE(float)
TFCN_INSTANTIATE(double)
#undef TFCN_INSTANTIATE

bool Adam::step(std::span<ParamRef<float>> params, double lr,
                AdamState& state) const {
  for (const auto& p : params)
    for (float g : p.grad)
      if (!std::isfinite(g)) {
        spdlog::warn("adam: non-finite gradient in {}, step {} rejected",
                     p.name, state.step + 1);
        return false;
      }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0f);
      state.v.emplace_back(p.size(), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam: optimizer state holds " +
                     std::to_string(state.m.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].size() ||
        state.v[i].size() != params[i].size())
      throw ShapeError("adam: moment shape mismatch at " + params[i].name);

  const std::int64_t step = state.step + 1;
  const double c1 = 1.0 - std::pow(beta1_, double(step));
  const double c2 = 1.0 - std::pow(beta2_, double(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      const double mk = beta1_ * m[k] + (1.0 - beta1_) * g;
      const double vk = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + epsilon_);
      p.value[k] = static_cast<float>(p.value[k] - update);
    }
  }
  state.step = step;
  return true;
}

std::string_view event_name(ScheduleEvent e) {
  switch (e) {
    case ScheduleEvent::kNone: return "none";
    case ScheduleEvent::kHalve: return "halve";
    case ScheduleEvent::kStop: return "stop";
  }
  return "none";
}

ScheduleEvent schedule_update(ScheduleState& state, double val_loss,
                              const TrainConfig& cfg) {
  if (!std::isfinite(val_loss))
    throw NonFiniteError("schedule: validation loss is not finite");
  if (val_loss < state.best_val_loss) {
    state.best_val_loss = val_loss;
    state.epochs_since_best = 0;
    state.epochs_above_best_consecutive = 0;
    return ScheduleEvent::kNone;
  }
  ++state.epochs_since_best;
  ++state.epochs_above_best_consecutive;
  if (state.epochs_since_best >= cfg.early_stop_patience)
    return ScheduleEvent::kStop;
  if (state.epochs_above_best_consecutive >= cfg.lr_halving_patience) {
    state.current_lr *= 0.5;
    state.epochs_above_best_consecutive = 0;
    return ScheduleEvent::kHalve;
  }
  return ScheduleEvent::kNone;
}

std::vector<Segment> segment_corpus(std::span<const Utterance> corpus,
                                    const TrainConfig& cfg,
                                    const StftConfig& stft_cfg) {
  std::vector<Segment> out;
  const std::size_t len = static_cast<std::size_t>(cfg.segment_samples);
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    const Utterance& utt = corpus[u];
    if (utt.noisy.size() != utt.clean.size())
      throw ShapeError("utterance '" + utt.name + "': noisy has " +
                       std::to_string(utt.noisy.size()) + " samples, clean has " +
                       std::to_string(utt.clean.size()));
    for (std::size_t off = 0; off < utt.noisy.size(); off += len) {
      const std::size_t rem = std::min(len, utt.noisy.size() - off);
      const int frames = stft_cfg.frames(rem);
      if (frames == 0) break;
      out.push_back({static_cast<int>(u), off, static_cast<int>(rem), frames});
    }
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed,
                                     int epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Batch make_batch(std::span<const Utterance> corpus,
                 std::span<const Segment> segments,
                 std::span<const std::size_t> picks, const Normalizer& norm,
                 const TrainConfig& cfg, const StftConfig& stft_cfg) {
  std::vector<LpsMatrix> noisy;
  std::vector<LpsMatrix> clean;
  Batch batch;
  std::vector<float> buf(static_cast<std::size_t>(cfg.segment_samples));
  for (std::size_t pick : picks) {
    const Segment& seg = segments[pick];
    const Utterance& utt = corpus[seg.utterance];
    auto cut = [&](const std::vector<float>& src) {
      std::fill(buf.begin(), buf.end(), 0.0f);
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                  seg.valid_samples, buf.begin());
      return lps(stft(buf, stft_cfg));
    };
    noisy.push_back(normalize(cut(utt.noisy), norm));
    clean.push_back(cut(utt.clean));
    batch.valid_frames.push_back(seg.valid_frames);
  }
  batch.noisy = to_tensor(noisy);
  batch.clean = to_tensor(clean);
  return batch;
}

Batch utterance_features(const Utterance& u, const Normalizer& norm,
                         const StftConfig& stft_cfg) {
  if (u.noisy.size() != u.clean.size())
    throw ShapeError("utterance '" + u.name + "': noisy/clean lengths differ");
  const LpsMatrix noisy = normalize(lps(stft(u.noisy, stft_cfg)), norm);
  const LpsMatrix clean = lps(stft(u.clean, stft_cfg));
  Batch b;
  b.noisy = to_tensor(std::span(&noisy, 1));
  b.clean = to_tensor(std::span(&clean, 1));
  b.valid_frames = {noisy.frames};
  return b;
}

double evaluate_loss(Model& model, std::span<const Utterance> corpus,
                     const Normalizer& norm, const StftConfig& stft_cfg) {
  if (corpus.empty()) return 0.0;
  const NormMode previous = model.mode();
  model.set_mode(NormMode::kInference);
  double total = 0.0;
  for (const Utterance& u : corpus) {
    const Batch b = utterance_features(u, norm, stft_cfg);
    const Tensor est = denormalize_output(model.forward(b.noisy), norm);
    total += batch_loss(b.clean, est, b.valid_frames);
  }
  model.set_mode(previous);
  return total / corpus.size();
}

void train(Model& model, const Dataset& data, const Normalizer& norm,
           const TrainConfig& cfg, TrainState& state,
           const TrainOptions& options, const StftConfig& stft_cfg) {
  cfg.validate(stft_cfg.hop);
  if (data.train.empty()) throw ConfigError("train: empty training corpus");
  if (data.valid.empty()) throw ConfigError("train: empty validation corpus");
  const std::vector<Segment> segments =
      segment_corpus(data.train, cfg, stft_cfg);
  if (segments.empty())
    throw ConfigError("train: no utterance is long enough for one frame");
  if (state.epochs_done == 0 && state.history.empty())
    state.schedule.current_lr = cfg.initial_lr;

  const bool persist = !options.out_dir.empty();
  if (persist) std::filesystem::create_directories(options.out_dir);
  const Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);

  int epochs_this_call = 0;
  while (!state.stopped && state.epochs_done < cfg.max_epochs) {
    if (options.epoch_limit > 0 && epochs_this_call >= options.epoch_limit)
      break;
    const int epoch = state.epochs_done + 1;
    const auto order = epoch_order(segments.size(), cfg.seed, epoch);
    const double lr = state.schedule.current_lr;

    double loss_sum = 0.0;
    std::size_t items = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> picks(order.data() + start,
                                               stop - start);
      Batch batch = make_batch(data.train, segments, picks, norm, cfg, stft_cfg);

      model.set_mode(NormMode::kTrain);
      const double loss = network_loss(model, batch.noisy, batch.clean,
                                       batch.valid_frames, norm, true);
      if (!std::isfinite(loss))
        throw NonFiniteError("training loss became non-finite in epoch " +
                             std::to_string(epoch) +
                             "; last good checkpoint left in place");
      auto params = model.parameters();
      adam.step(params, lr, state.adam);

      loss_sum += loss * double(picks.size());
      items += picks.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(items);
    rec.val_loss = evaluate_loss(model, data.valid, norm, stft_cfg);
    rec.lr = lr;
    const bool improved = rec.val_loss < state.schedule.best_val_loss;
    rec.event = schedule_update(state.schedule, rec.val_loss, cfg);
    rec.steps = state.adam.step;
    state.history.push_back(rec);
    state.epochs_done = epoch;
    ++epochs_this_call;
    if (rec.event == ScheduleEvent::kStop) state.stopped = true;
    if (state.epochs_done >= cfg.max_epochs) state.stopped = true;

    spdlog::info("epoch {} train {:.6f} val {:.6f} lr {:g} {}", epoch,
                 rec.train_loss, rec.val_loss, rec.lr, event_name(rec.event));
    if (persist) {
      model.set_mode(NormMode::kInference);
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", model);
      save_checkpoint(options.out_dir / "last.ckpt", model, &state);
      write_history_csv(options.out_dir / "history.csv", state.history);
    }
    if (options.on_epoch && !options.on_epoch(rec)) break;
  }
  model.set_mode(NormMode::kInference);
}

void write_history_csv(const std::filesystem::path& path,
                       std::span<const EpochRecord> history) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << "epoch,train_loss,val_loss,lr,event\n";
    char line[160];
    for (const auto& r : history) {
      std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%s\n", r.epoch,
                    r.train_loss, r.val_loss, r.lr,
                    std::string(event_name(r.event)).c_str());
      out << line;
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace tfcn
