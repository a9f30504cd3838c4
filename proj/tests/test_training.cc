// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.h"
#include "tfcn/checkpoint.h"
#include "tfcn/grad_check.h"
#include "tfcn/synth.h"
#include "tfcn/training.h"

using namespace tfcn;
using tfcn::testing::random_tensor;
using tfcn::testing::random_vector;

namespace {

LpsMatrix random_lps(int frames, int bins, std::uint64_t seed) {
  LpsMatrix m(frames, bins);
  auto v = random_vector<float>(m.data.size(), seed, -8.0, 4.0);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

// Straight transcription of the frame-RMS loss with long double sums.
double oracle_loss(const LpsMatrix& s, const LpsMatrix& e) {
  long double total = 0;
  for (int i = 0; i < s.frames; ++i) {
    long double sq = 0;
    for (int j = 0; j < s.bins; ++j) {
      long double d = (long double)s.at(i, j) - e.at(i, j);
      sq += d * d;
    }
    total += std::sqrt(sq / s.bins);
  }
  return static_cast<double>(total / s.frames);
}

Utterance from_pair(const SynthPair& p) { return {p.name, p.noisy, p.clean}; }

std::vector<Utterance> toy_corpus(int n, std::uint64_t seed, double lo,
                                  double hi) {
  std::vector<Utterance> out;
  for (const auto& p : synth_corpus(n, seed, {lo, hi, 16000}))
    out.push_back(from_pair(p));
  return out;
}

ModelConfig tiny_model() {
  ModelConfig cfg = ModelConfig::preset(Variant::kTfcn);
  cfg.repeated_blocks = 1;
  cfg.dilated_blocks = 2;
  cfg.block_channels = 4;
  cfg.bottleneck_channels = 8;
  return cfg;
}

Normalizer corpus_norm(const std::vector<Utterance>& corpus) {
  NormAccumulator acc(256);
  for (const auto& u : corpus) acc.add(lps(stft(u.noisy)));
  return acc.finish();
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.segment_samples = 8192;
  cfg.batch_size = 2;
  cfg.seed = 5;
  return cfg;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tfcn_training_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("loss of identical matrices is zero") {
  auto s = random_lps(5, 256, 1);
  CHECK(lps_loss(s, s) == 0.0);
  auto g = lps_loss_gradient(s, s);
  for (float v : g.data) CHECK(v == 0.0f);
}

TEST_CASE("constant offset gives its magnitude") {
  auto s = random_lps(4, 256, 2);
  for (float c : {0.5f, -1.25f, 3.0f}) {
    LpsMatrix e = s;
    for (float& v : e.data) v += c;
    CHECK(lps_loss(s, e) == doctest::Approx(std::abs(c)).epsilon(1e-6));
  }
}

TEST_CASE("loss matches the scalar oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = random_lps(3, 256, 10 + seed);
    auto e = random_lps(3, 256, 20 + seed);
    CHECK(std::abs(lps_loss(s, e) - oracle_loss(s, e)) < 1e-6);
    CHECK(lps_loss(s, e) >= 0.0);
  }
}

TEST_CASE("loss rejects mismatched shapes") {
  CHECK_THROWS_AS(lps_loss(LpsMatrix(3, 256), LpsMatrix(4, 256)), ShapeError);
  CHECK_THROWS_AS(lps_loss_gradient(LpsMatrix(3, 256), LpsMatrix(3, 255)),
                  ShapeError);
}

TEST_CASE("loss gradient matches finite differences") {
  const Shape shape{1, 1, 16, 6};
  auto s = random_tensor<double>(shape, 30, -6, 2);
  auto e = random_tensor<double>(shape, 31, -6, 2);
  const int valid[] = {6};
  BasicTensor<double> grad;
  batch_loss(s, e, valid, &grad);
  std::vector<GradProbe> probes = {{"estimate", e.values(), grad.values()}};
  auto rep = grad_check([&] { return batch_loss(s, e, valid); }, probes,
                        {.step = 1e-5});
  CAPTURE(rep.worst);
  CHECK(rep.passed(1e-3));

  // The single-matrix gradient is the same formula.
  LpsMatrix sm(6, 16), em(6, 16);
  for (int f = 0; f < 16; ++f)
    for (int t = 0; t < 6; ++t) {
      sm.at(t, f) = static_cast<float>(s(0, 0, f, t));
      em.at(t, f) = static_cast<float>(e(0, 0, f, t));
    }
  auto gm = lps_loss_gradient(sm, em);
  for (int f = 0; f < 16; ++f)
    for (int t = 0; t < 6; ++t)
      CHECK(gm.at(t, f) == doctest::Approx(grad(0, 0, f, t)).epsilon(1e-5));
}

TEST_CASE("loss gradient is invariant under joint scaling") {
  auto s = random_lps(4, 256, 40);
  auto e = random_lps(4, 256, 41);
  LpsMatrix s2 = s, e2 = e;
  for (float& v : s2.data) v *= 2.0f;
  for (float& v : e2.data) v *= 2.0f;
  auto g1 = lps_loss_gradient(s, e);
  auto g2 = lps_loss_gradient(s2, e2);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < g1.data.size(); ++i) {
    worst = std::max(worst, double(std::abs(g1.data[i] - g2.data[i])));
    scale = std::max(scale, double(std::abs(g1.data[i])));
  }
  CHECK(worst <= 1e-6 * scale);
  CHECK(lps_loss(s2, e2) == doctest::Approx(2.0 * lps_loss(s, e)));
}

TEST_CASE("masked frames are excluded from loss and gradient") {
  auto s = random_lps(6, 256, 50);
  auto e = random_lps(6, 256, 51);
  LpsMatrix s3(3, 256), e3(3, 256);
  std::copy_n(s.data.begin(), s3.data.size(), s3.data.begin());
  std::copy_n(e.data.begin(), e3.data.size(), e3.data.begin());
  CHECK(lps_loss(s, e, 3) == doctest::Approx(lps_loss(s3, e3)).epsilon(1e-12));
  auto g = lps_loss_gradient(s, e, 3);
  auto g3 = lps_loss_gradient(s3, e3);
  for (int t = 0; t < 6; ++t)
    for (int j = 0; j < 256; ++j)
      CHECK(g.at(t, j) == (t < 3 ? g3.at(t, j) : 0.0f));
  CHECK(lps_loss(s, e, 0) == 0.0);
}

TEST_CASE("batch loss is the mean of per-item losses") {
  std::vector<LpsMatrix> s = {random_lps(5, 256, 60), random_lps(5, 256, 61)};
  std::vector<LpsMatrix> e = {random_lps(5, 256, 62), random_lps(5, 256, 63)};
  const int valid[] = {5, 2};
  Tensor grad;
  double loss = batch_loss(to_tensor(s), to_tensor(e), valid, &grad);
  double expect = 0.5 * (lps_loss(s[0], e[0]) + lps_loss(s[1], e[1], 2));
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  for (int t = 2; t < 5; ++t)
    for (int f = 0; f < 256; ++f) CHECK(grad(1, 0, f, t) == 0.0f);
  const int bad[] = {5};
  CHECK_THROWS_AS(batch_loss(to_tensor(s), to_tensor(e), bad), ShapeError);
}

namespace {

struct Scalars {
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<ParamRef<float>> refs() {
    return {{"p", {static_cast<int>(value.size())}, value, grad}};
  }
};

}  // namespace

TEST_CASE("first Adam steps have the closed form") {
  // With a constant gradient the bias-corrected moments are g and g², so
  // every step moves by lr·g/(|g| + eps).
  Scalars p{{1.0f, -2.0f, 0.5f}, {0.5f, -3.0f, 1e-3f}};
  AdamState st;
  Adam adam;
  const double lr = 1e-3;
  std::vector<double> start(p.value.begin(), p.value.end());
  for (int k = 1; k <= 3; ++k) {
    auto refs = p.refs();
    REQUIRE(adam.step(refs, lr, st));
    CHECK(st.step == k);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double expect = start[i] - k * lr * g / (std::abs(g) + 1e-8);
      CHECK(std::abs(p.value[i] - expect) < 1e-6);
    }
  }
}

TEST_CASE("Adam with zero gradient leaves parameters in place") {
  Scalars p{{1.0f, 2.0f}, {0.0f, 0.0f}};
  AdamState st;
  auto refs = p.refs();
  REQUIRE(Adam().step(refs, 1e-3, st));
  CHECK(p.value == std::vector<float>{1.0f, 2.0f});
  CHECK(st.step == 1);
}

TEST_CASE("Adam is deterministic") {
  Scalars a{random_vector<float>(50, 70), random_vector<float>(50, 71)};
  Scalars b = a;
  AdamState sa, sb;
  for (int k = 0; k < 5; ++k) {
    auto ra = a.refs();
    auto rb = b.refs();
    Adam().step(ra, 1e-2, sa);
    Adam().step(rb, 1e-2, sb);
  }
  CHECK(a.value == b.value);
  CHECK(sa.m == sb.m);
  CHECK(sa.v == sb.v);
}

TEST_CASE("Adam rejects a non-finite gradient") {
  Scalars p{{1.0f, 2.0f}, {0.1f, 0.2f}};
  AdamState st;
  auto refs = p.refs();
  REQUIRE(Adam().step(refs, 1e-3, st));
  const auto before = p.value;
  const auto m = st.m;
  p.grad[1] = std::numeric_limits<float>::quiet_NaN();
  refs = p.refs();
  CHECK_FALSE(Adam().step(refs, 1e-3, st));
  CHECK(p.value == before);
  CHECK(st.m == m);
  CHECK(st.step == 1);
  p.grad[1] = std::numeric_limits<float>::infinity();
  refs = p.refs();
  CHECK_FALSE(Adam().step(refs, 1e-3, st));
}

namespace {

std::vector<ScheduleEvent> run_schedule(const std::vector<double>& losses,
                                        ScheduleState& st,
                                        const TrainConfig& cfg = {}) {
  std::vector<ScheduleEvent> ev;
  for (double l : losses) ev.push_back(schedule_update(st, l, cfg));
  return ev;
}

}  // namespace

TEST_CASE("schedule halves after three non-improving epochs") {
  ScheduleState st;
  auto ev = run_schedule({1.0, 0.9, 0.95, 0.96, 0.97}, st);
  using E = ScheduleEvent;
  CHECK(ev == std::vector<E>{E::kNone, E::kNone, E::kNone, E::kNone, E::kHalve});
  CHECK(st.current_lr == 0.0005);
  CHECK(st.best_val_loss == 0.9);
  CHECK(st.epochs_above_best_consecutive == 0);
  CHECK(st.epochs_since_best == 3);
}

TEST_CASE("strictly decreasing losses never halve or stop") {
  ScheduleState st;
  std::vector<double> losses;
  for (int i = 0; i < 100; ++i) losses.push_back(10.0 - 0.05 * i);
  for (auto e : run_schedule(losses, st)) CHECK(e == ScheduleEvent::kNone);
  CHECK(st.current_lr == 1e-3);
}

TEST_CASE("flat losses stop exactly ten epochs after the best") {
  ScheduleState st;
  std::vector<double> losses = {2.0};
  for (int i = 0; i < 10; ++i) losses.push_back(2.0);  // ties do not improve
  auto ev = run_schedule(losses, st);
  for (int i = 0; i < 10; ++i) CHECK(ev[i] != ScheduleEvent::kStop);
  CHECK(ev[10] == ScheduleEvent::kStop);
  CHECK(ev[3] == ScheduleEvent::kHalve);
  CHECK(ev[6] == ScheduleEvent::kHalve);
  CHECK(ev[9] == ScheduleEvent::kHalve);
}

TEST_CASE("two halvings leave a quarter of the initial rate") {
  ScheduleState st;
  run_schedule({1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6}, st);
  CHECK(st.current_lr == 0.00025);
}

TEST_CASE("schedule matches a history interpreter on all 2^10 sequences") {
  // The interpreter looks only at the improve/non-improve history: the
  // number of epochs since the last improvement decides everything.
  const TrainConfig cfg;
  int mismatches = 0;
  for (int mask = 0; mask < 1024; ++mask) {
    ScheduleState st;
    schedule_update(st, 100.0, cfg);  // establishes a best
    double best = 100.0;
    double lr = cfg.initial_lr;
    int since = 0;
    bool stopped = false;
    for (int e = 0; e < 10 && !stopped; ++e) {
      const bool improve = mask >> e & 1;
      const double loss = improve ? best - 1.0 : best + 0.5 * (e % 2);
      ScheduleEvent expect = ScheduleEvent::kNone;
      if (improve) {
        best = loss;
        since = 0;
      } else {
        ++since;
        if (since == cfg.early_stop_patience) {
          expect = ScheduleEvent::kStop;
          stopped = true;
        } else if (since % cfg.lr_halving_patience == 0) {
          expect = ScheduleEvent::kHalve;
          lr /= 2;
        }
      }
      if (schedule_update(st, loss, cfg) != expect || st.current_lr != lr)
        ++mismatches;
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.segment_samples = 32001;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr_halving_patience = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.early_stop_patience = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("segmenting into fixed-length pieces") {
  const TrainConfig cfg;
  std::vector<Utterance> corpus = {{"a", std::vector<float>(64000),
                                    std::vector<float>(64000)}};
  CHECK(segment_corpus(corpus, cfg).size() == 2);

  corpus = {{"b", std::vector<float>(70000), std::vector<float>(70000)}};
  auto segs = segment_corpus(corpus, cfg);
  REQUIRE(segs.size() == 3);
  CHECK(segs[0].valid_frames == 124);
  CHECK(segs[2].offset == 64000);
  CHECK(segs[2].valid_samples == 6000);
  int inside = 0;  // frames lying wholly in the 6000 valid samples
  for (int t = 0; t < 124; ++t) inside += t * 256 + 512 <= 6000;
  CHECK(segs[2].valid_frames == inside);

  corpus = {{"c", std::vector<float>(64300), std::vector<float>(64300)}};
  CHECK(segment_corpus(corpus, cfg).size() == 2);

  corpus = {{"pair_7", std::vector<float>(100), std::vector<float>(99)}};
  try {
    segment_corpus(corpus, cfg);
    FAIL("length mismatch accepted");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("pair_7") != std::string::npos);
  }
}

TEST_CASE("epoch order is a seeded permutation") {
  auto a = epoch_order(40, 9, 3);
  auto b = epoch_order(40, 9, 3);
  CHECK(a == b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  CHECK(epoch_order(40, 9, 4) != a);
  CHECK(epoch_order(40, 10, 3) != a);
}

TEST_CASE("batches pad partial segments with zeros") {
  std::vector<Utterance> corpus = toy_corpus(1, 3, 2.2, 2.2);
  TrainConfig cfg;
  auto segs = segment_corpus(corpus, cfg);
  REQUIRE(segs.size() == 2);
  const std::size_t picks[] = {1, 0};
  Normalizer norm = corpus_norm(corpus);
  Batch b = make_batch(corpus, segs, picks, norm, cfg);
  CHECK(b.noisy.shape() == Shape{2, 1, 256, 124});
  CHECK(b.valid_frames == std::vector<int>{segs[1].valid_frames, 124});

  std::vector<float> tail(32000, 0.0f);
  std::copy_n(corpus[0].clean.begin() + 32000, segs[1].valid_samples,
              tail.begin());
  LpsMatrix expect = lps(stft(tail));
  LpsMatrix got = from_tensor(b.clean, 0);
  CHECK(got.data == expect.data);
  LpsMatrix head = normalize(
      lps(stft(std::span(corpus[0].noisy).first(32000))), norm);
  CHECK(from_tensor(b.noisy, 1).data == head.data);
}

TEST_CASE("loss through the network matches finite differences") {
  ModelConfig cfg = ModelConfig::preset(Variant::kTfcn);
  cfg.repeated_blocks = 1;
  cfg.dilated_blocks = 2;
  cfg.freq_bins = 8;
  cfg.block_channels = 4;
  cfg.bottleneck_channels = 8;
  Network<double> net(cfg, 80);
  auto ref = net.cast<double>();
  Normalizer norm;
  for (float v : random_vector<float>(8, 81, -3, 1)) norm.mean.push_back(v);
  for (float v : random_vector<float>(8, 82, 0.5, 2)) norm.stddev.push_back(v);
  auto x = random_tensor<double>(Shape{2, 1, 8, 10}, 83);
  auto y = random_tensor<double>(Shape{2, 1, 8, 10}, 84, -4, 2);
  const int valid[] = {10, 7};

  network_loss(net, x, y, valid, norm, true);
  std::vector<GradProbe> probes;
  auto pa = net.parameters();
  auto pr = ref.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    probes.push_back({pr[i].name, pr[i].value, pa[i].grad});
  auto objective = [&] { return network_loss(ref, x, y, valid, norm, false); };
  auto rep = grad_check(objective, probes,
                        {.step = 1e-5, .max_coordinates = 50, .seed = 85});
  CAPTURE(rep.worst);
  CHECK(rep.checked >= 40);
  CHECK(rep.passed(1e-3));
}

TEST_CASE("checkpoints round-trip the model") {
  auto dir = scratch("ckpt");
  ModelConfig cfg = tiny_model();
  cfg.causality = CausalityMode::causal();
  Model m(cfg, 90);
  for (auto& b : m.buffers())
    for (float& v : b.value) v += 0.25f;
  save_checkpoint(dir / "m.ckpt", m);
  Model r = load_model(dir / "m.ckpt");
  CHECK(r.config() == cfg);
  CHECK(r.seed() == 90u);
  m.set_mode(NormMode::kInference);
  auto x = random_tensor(Shape{1, 1, 256, 12}, 91);
  Tensor a = m.forward(x);
  Tensor b = r.forward(x);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));

  // Corruptions are rejected.
  std::string bytes = slurp(dir / "m.ckpt");
  {
    std::ofstream(dir / "short.ckpt", std::ios::binary)
        << bytes.substr(0, bytes.size() - 4);
    CHECK_THROWS_AS(read_checkpoint(dir / "short.ckpt"), CheckpointError);
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(dir / "magic.ckpt", std::ios::binary) << bad;
    CHECK_THROWS_AS(read_checkpoint(dir / "magic.ckpt"), CheckpointError);
  }
  Checkpoint c = read_checkpoint(dir / "m.ckpt");
  c.tensors.erase(c.tensors.begin());
  CHECK_THROWS_AS(restore_model(c), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), ResourceError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and resumable") {
  auto corpus = toy_corpus(3, 11, 1.0, 1.5);
  Dataset data{{corpus[0], corpus[1]}, {corpus[2]}};
  Normalizer norm = corpus_norm(data.train);
  TrainConfig cfg = tiny_train();

  auto run = [&](const std::filesystem::path& out, int limit) {
    Model m(tiny_model(), 7);
    TrainState st;
    train(m, data, norm, cfg, st, {out, limit, {}});
    return st;
  };
  auto d1 = scratch("run1");
  auto d2 = scratch("run2");
  TrainState a = run(d1, 4);
  TrainState b = run(d2, 4);
  REQUIRE(a.history.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_loss == b.history[i].val_loss);
    CHECK(a.history[i].epoch == int(i) + 1);
  }
  CHECK(slurp(d1 / "history.csv") == slurp(d2 / "history.csv"));
  CHECK(std::filesystem::exists(d1 / "best.ckpt"));
  CHECK(a.adam.step == 4 * 3);  // 6 segments in batches of 2

  // Two epochs, reload from last.ckpt, two more.
  auto d3 = scratch("run3");
  run(d3, 2);
  Checkpoint c = read_checkpoint(d3 / "last.ckpt");
  Model m = restore_model(c);
  TrainState st = restore_train_state(c, m);
  CHECK(st.epochs_done == 2);
  train(m, data, norm, cfg, st, {d3, 2, {}});
  REQUIRE(st.history.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(st.history[i].train_loss - a.history[i].train_loss) < 1e-5);
    CHECK(std::abs(st.history[i].val_loss - a.history[i].val_loss) < 1e-5);
  }
  CHECK(slurp(d3 / "history.csv") == slurp(d1 / "history.csv"));

  std::ifstream csv(d1 / "history.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,train_loss,val_loss,lr,event");
  for (auto d : {d1, d2, d3}) std::filesystem::remove_all(d);
}

TEST_CASE("training stops when the callback says so or at max_epochs") {
  auto corpus = toy_corpus(2, 12, 0.6, 0.6);
  Dataset data{{corpus[0]}, {corpus[1]}};
  Normalizer norm = corpus_norm(data.train);
  TrainConfig cfg = tiny_train();
  cfg.max_epochs = 3;
  Model m(tiny_model(), 3);
  TrainState st;
  int calls = 0;
  train(m, data, norm, cfg, st, {{}, 0, [&](const EpochRecord&) {
          return ++calls < 2;
        }});
  CHECK(st.history.size() == 2);
  train(m, data, norm, cfg, st);
  CHECK(st.history.size() == 3);
  CHECK(st.stopped);
  CHECK_THROWS_AS(train(m, Dataset{{}, {corpus[1]}}, norm, cfg, st),
                  ConfigError);
}
