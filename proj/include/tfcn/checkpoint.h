// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Checkpoint file: "TFCNCKPT", a little-endian u32 header length, a JSON
// header (format version, model config, seed, tensor manifest, optional
// training state) and raw little-endian float32 data in manifest order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tfcn/network.h"
#include "tfcn/training.h"

namespace tfcn {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct CheckpointTensor {
  std::string name;
  std::vector<int> shape;
  std::string role;  // param | buffer | adam_m | adam_v
  std::vector<float> values;
};

struct Checkpoint {
  static constexpr int kVersion = 1;

  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<CheckpointTensor> tensors;
  std::optional<TrainState> training;
};

Checkpoint capture(Model& model, const TrainState* state = nullptr);

/// Writes through a temporary file and renames, so an interrupted write
/// never replaces a good checkpoint.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const TrainState* state = nullptr) {
  write_checkpoint(path, capture(model, state));
}

/// Rebuilds the model; the learnable-parameter total must equal
/// param_count(config).
Model restore_model(const Checkpoint& ckpt);

/// Adam moments come back aligned with model.parameters().
TrainState restore_train_state(const Checkpoint& ckpt, Model& model);

inline Model load_model(const std::filesystem::path& path) {
  return restore_model(read_checkpoint(path));
}

}  // namespace tfcn
