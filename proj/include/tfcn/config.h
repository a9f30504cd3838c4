// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// JSON forms of the configuration structs. Parsing rejects unknown keys and
// reports the offending key path.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "tfcn/dsp.h"
#include "tfcn/network.h"
#include "tfcn/training.h"

namespace tfcn {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const StftConfig& cfg);

/// `where` prefixes error messages ("model", "run.train", ...).
ModelConfig model_config_from_json(const Json& j, const std::string& where = "model");
TrainConfig train_config_from_json(const Json& j, const std::string& where = "train");
StftConfig stft_config_from_json(const Json& j, const std::string& where = "stft");

std::string causality_to_string(const CausalityMode& mode);
/// "non_causal", "causal" or "semi_causal:<frames>".
CausalityMode parse_causality(const std::string& text);

struct RunPaths {
  std::string train_manifest;
  std::string valid_manifest;
  std::string stats;
  std::string out_dir = "run";
  bool operator==(const RunPaths&) const = default;
};

/// The single versioned document behind `tfcn train`.
struct RunConfig {
  static constexpr int kVersion = 1;

  ModelConfig model;
  TrainConfig train;
  StftConfig stft;
  RunPaths paths;
  std::uint64_t seed = 0;

  Json to_json() const;
  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  bool operator==(const RunConfig&) const = default;
};

}  // namespace tfcn
