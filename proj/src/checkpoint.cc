// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/checkpoint.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "tfcn/config.h"

namespace tfcn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'F', 'C', 'N', 'C', 'K', 'P', 'T'};

CheckpointTensor from_ref(const ParamRef<float>& p, const char* role,
                          std::span<const float> values) {
  return {p.name, p.shape, role, {values.begin(), values.end()}};
}

Json schedule_json(const ScheduleState& s) {
  Json j{{"epochs_since_best", s.epochs_since_best},
         {"epochs_above_best_consecutive", s.epochs_above_best_consecutive},
         {"current_lr", s.current_lr}};
  j["best_val_loss"] = std::isfinite(s.best_val_loss) ? Json(s.best_val_loss)
                                                      : Json(nullptr);
  return j;
}

ScheduleEvent parse_event(const std::string& name) {
  for (ScheduleEvent e :
       {ScheduleEvent::kNone, ScheduleEvent::kHalve, ScheduleEvent::kStop})
    if (event_name(e) == name) return e;
  throw CheckpointError("checkpoint: unknown schedule event '" + name + "'");
}

Json training_json(const TrainState& s) {
  Json history = Json::array();
  for (const auto& r : s.history)
    history.push_back({{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"val_loss", r.val_loss},
                       {"lr", r.lr},
                       {"event", std::string(event_name(r.event))},
                       {"steps", r.steps}});
  return Json{{"epochs_done", s.epochs_done},
              {"stopped", s.stopped},
              {"adam_step", s.adam.step},
              {"schedule", schedule_json(s.schedule)},
              {"history", history}};
}

TrainState training_from_json(const Json& j) {
  TrainState s;
  s.epochs_done = j.at("epochs_done").get<int>();
  s.stopped = j.at("stopped").get<bool>();
  s.adam.step = j.at("adam_step").get<std::int64_t>();
  const Json& sc = j.at("schedule");
  s.schedule.best_val_loss = sc.at("best_val_loss").is_null()
                                 ? std::numeric_limits<double>::infinity()
                                 : sc.at("best_val_loss").get<double>();
  s.schedule.epochs_since_best = sc.at("epochs_since_best").get<int>();
  s.schedule.epochs_above_best_consecutive =
      sc.at("epochs_above_best_consecutive").get<int>();
  s.schedule.current_lr = sc.at("current_lr").get<double>();
  for (const Json& r : j.at("history")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<int>();
    e.train_loss = r.at("train_loss").get<double>();
    e.val_loss = r.at("val_loss").get<double>();
    e.lr = r.at("lr").get<double>();
    e.event = parse_event(r.at("event").get<std::string>());
    e.steps = r.at("steps").get<std::int64_t>();
    s.history.push_back(e);
  }
  return s;
}

}  // namespace

Checkpoint capture(Model& model, const TrainState* state) {
  Checkpoint c;
  c.config = model.config();
  c.seed = model.seed();
  auto params = model.parameters();
  for (const auto& p : params) c.tensors.push_back(from_ref(p, "param", p.value));
  for (const auto& b : model.buffers())
    c.tensors.push_back(from_ref(b, "buffer", b.value));
  if (state) {
    c.training = *state;
    if (!state->adam.m.empty()) {
      if (state->adam.m.size() != params.size())
        throw CheckpointError("checkpoint: optimizer state does not match model");
      for (std::size_t i = 0; i < params.size(); ++i) {
        c.tensors.push_back(from_ref(params[i], "adam_m", state->adam.m[i]));
        c.tensors.push_back(from_ref(params[i], "adam_v", state->adam.v[i]));
      }
    }
    c.training->adam = {};
    c.training->adam.step = state->adam.step;
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Json manifest = Json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    manifest.push_back({{"name", t.name},
                        {"shape", t.shape},
                        {"role", t.role},
                        {"offset", offset},
                        {"count", t.values.size()}});
    offset += t.values.size() * sizeof(float);
  }
  Json header{{"format", "TFCNCKPT"},
              {"version", Checkpoint::kVersion},
              {"model", to_json(ckpt.config)},
              {"seed", ckpt.seed},
              {"tensors", manifest}};
  if (ckpt.training) header["training"] = training_json(*ckpt.training);
  const std::string text = header.dump();
  const auto length = static_cast<std::uint32_t>(text.size());

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError("cannot open checkpoint " + path.string());
  char magic[8] = {};
  std::uint32_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError(path.string() + ": not a TFCN checkpoint");
  std::string text(length, '\0');
  in.read(text.data(), length);
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  Checkpoint c;
  try {
    const Json header = Json::parse(text);
    const int version = header.at("version").get<int>();
    if (version != Checkpoint::kVersion)
      throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                            std::to_string(version));
    c.config = model_config_from_json(header.at("model"), "checkpoint.model");
    c.seed = header.at("seed").get<std::uint64_t>();
    std::uint64_t expected = 0;
    for (const Json& m : header.at("tensors")) {
      CheckpointTensor t;
      t.name = m.at("name").get<std::string>();
      t.shape = m.at("shape").get<std::vector<int>>();
      t.role = m.at("role").get<std::string>();
      if (m.at("offset").get<std::uint64_t>() != expected)
        throw CheckpointError(path.string() + ": manifest offset mismatch at " +
                              t.name);
      t.values.resize(m.at("count").get<std::size_t>());
      std::size_t shape_total = 1;
      for (int d : t.shape) shape_total *= static_cast<std::size_t>(d);
      if (shape_total != t.values.size())
        throw CheckpointError(path.string() + ": shape/count mismatch at " +
                              t.name);
      expected += t.values.size() * sizeof(float);
      c.tensors.push_back(std::move(t));
    }
    if (header.contains("training"))
      c.training = training_from_json(header.at("training"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  for (auto& t : c.tensors) {
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    if (!in) throw CheckpointError(path.string() + ": truncated data at " + t.name);
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw CheckpointError(path.string() + ": trailing bytes after tensor data");
  return c;
}

Model restore_model(const Checkpoint& ckpt) {
  Model model(ckpt.config, ckpt.seed);
  std::map<std::string, const CheckpointTensor*> params;
  std::map<std::string, const CheckpointTensor*> buffers;
  std::size_t learnable = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.role == "param") {
      params[t.name] = &t;
      learnable += t.values.size();
    } else if (t.role == "buffer") {
      buffers[t.name] = &t;
    }
  }
  if (learnable != param_count(ckpt.config))
    throw CheckpointError("checkpoint holds " + std::to_string(learnable) +
                          " learnable values, config requires " +
                          std::to_string(param_count(ckpt.config)));
  auto fill = [](std::vector<ParamRef<float>> refs,
                 const std::map<std::string, const CheckpointTensor*>& src) {
    for (auto& r : refs) {
      auto it = src.find(r.name);
      if (it == src.end())
        throw CheckpointError("checkpoint is missing tensor " + r.name);
      if (it->second->shape != r.shape)
        throw CheckpointError("checkpoint tensor " + r.name +
                              " does not match the model's shape");
      std::copy(it->second->values.begin(), it->second->values.end(),
                r.value.begin());
    }
  };
  fill(model.parameters(), params);
  fill(model.buffers(), buffers);
  model.set_mode(NormMode::kInference);
  return model;
}

TrainState restore_train_state(const Checkpoint& ckpt, Model& model) {
  if (!ckpt.training)
    throw CheckpointError("checkpoint carries no training state");
  TrainState s = *ckpt.training;
  std::map<std::string, const CheckpointTensor*> m;
  std::map<std::string, const CheckpointTensor*> v;
  for (const auto& t : ckpt.tensors) {
    if (t.role == "adam_m") m[t.name] = &t;
    if (t.role == "adam_v") v[t.name] = &t;
  }
  if (m.empty()) return s;
  for (const auto& p : model.parameters()) {
    if (!m.contains(p.name) || !v.contains(p.name))
      throw CheckpointError("checkpoint is missing optimizer state for " + p.name);
    if (m[p.name]->values.size() != p.size() || v[p.name]->values.size() != p.size())
      throw CheckpointError("optimizer state for " + p.name + " has the wrong size");
    s.adam.m.push_back(m[p.name]->values);
    s.adam.v.push_back(v[p.name]->values);
  }
  return s;
}

}  // namespace tfcn
