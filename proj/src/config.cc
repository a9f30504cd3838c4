// Copyright 2026 The TFCN Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tfcn/config.h"

#include <fstream>
#include <initializer_list>
#include <set>

namespace tfcn {

namespace {

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
}

void reject_unknown(const Json& j, const std::string& where,
                    std::initializer_list<const char*> known) {
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key))
      throw ConfigError(where + "." + key + ": unknown key");
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" +
                      j.at(key).dump() + ")");
  }
}

Json extent(Extent2 e) { return Json::array({e.freq, e.time}); }

void read_extent(const Json& j, const char* key, Extent2& out,
                 const std::string& where) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() ||
      !v[1].is_number_integer())
    throw ConfigError(where + "." + key + ": expected [freq, time] integers");
  out = {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

std::string causality_to_string(const CausalityMode& mode) {
  switch (mode.kind) {
    case CausalityMode::Kind::kNonCausal:
      return "non_causal";
    case CausalityMode::Kind::kCausal:
      return "causal";
    case CausalityMode::Kind::kSemiCausal:
      return "semi_causal:" + std::to_string(mode.look_ahead_frames);
  }
  return "?";
}

CausalityMode parse_causality(const std::string& text) {
  if (text == "non_causal") return CausalityMode::non_causal();
  if (text == "causal") return CausalityMode::causal();
  const std::string prefix = "semi_causal:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string n = text.substr(prefix.size());
    std::size_t used = 0;
    int frames = -1;
    try {
      frames = std::stoi(n, &used);
    } catch (const std::exception&) {
    }
    if (used == n.size() && frames >= 0) return CausalityMode::semi_causal(frames);
  }
  throw ConfigError("causality '" + text +
                    "': expected non_causal, causal or semi_causal:<frames>");
}

Json to_json(const ModelConfig& c) {
  return Json{{"variant", std::string(variant_name(c.variant))},
              {"repeated_blocks", c.repeated_blocks},
              {"dilated_blocks", c.dilated_blocks},
              {"block_channels", c.block_channels},
              {"bottleneck_channels", c.bottleneck_channels},
              {"input_kernel", extent(c.input_kernel)},
              {"dilated_kernel", extent(c.dilated_kernel)},
              {"dilation_base", c.dilation_base},
              {"freq_bins", c.freq_bins},
              {"causality", causality_to_string(c.causality)},
              {"dense_intra", c.dense_intra},
              {"dense_inter", c.dense_inter},
              {"depthwise_dilated", c.depthwise_dilated},
              {"conv_algorithm",
               c.conv_algorithm == ConvAlgorithm::kDirect ? "direct" : "im2col"}};
}

ModelConfig model_config_from_json(const Json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"variant", "repeated_blocks", "dilated_blocks",
                  "block_channels", "bottleneck_channels", "input_kernel",
                  "dilated_kernel", "dilation_base", "freq_bins", "causality",
                  "dense_intra", "dense_inter", "depthwise_dilated",
                  "conv_algorithm"});
  // Missing keys fall back to the variant's preset.
  std::string variant = "TFCN";
  read(j, "variant", variant, where);
  ModelConfig c;
  try {
    c = ModelConfig::preset(parse_variant(variant));
  } catch (const ConfigError& e) {
    throw ConfigError(where + ".variant: " + e.what());
  }
  read(j, "repeated_blocks", c.repeated_blocks, where);
  read(j, "dilated_blocks", c.dilated_blocks, where);
  read(j, "block_channels", c.block_channels, where);
  read(j, "bottleneck_channels", c.bottleneck_channels, where);
  read_extent(j, "input_kernel", c.input_kernel, where);
  read_extent(j, "dilated_kernel", c.dilated_kernel, where);
  read(j, "dilation_base", c.dilation_base, where);
  read(j, "freq_bins", c.freq_bins, where);
  std::string causality = causality_to_string(c.causality);
  read(j, "causality", causality, where);
  try {
    c.causality = parse_causality(causality);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ".causality: " + e.what());
  }
  read(j, "dense_intra", c.dense_intra, where);
  read(j, "dense_inter", c.dense_inter, where);
  read(j, "depthwise_dilated", c.depthwise_dilated, where);
  std::string algo = "direct";
  read(j, "conv_algorithm", algo, where);
  if (algo == "direct")
    c.conv_algorithm = ConvAlgorithm::kDirect;
  else if (algo == "im2col")
    c.conv_algorithm = ConvAlgorithm::kIm2col;
  else
    throw ConfigError(where + ".conv_algorithm: expected direct or im2col");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"initial_lr", c.initial_lr},
              {"lr_halving_patience", c.lr_halving_patience},
              {"early_stop_patience", c.early_stop_patience},
              {"max_epochs", c.max_epochs},
              {"segment_samples", c.segment_samples},
              {"batch_size", c.batch_size},
              {"adam_betas", Json::array({c.adam_beta1, c.adam_beta2})},
              {"adam_epsilon", c.adam_epsilon}};
}

TrainConfig train_config_from_json(const Json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"initial_lr", "lr_halving_patience", "early_stop_patience",
                  "max_epochs", "segment_samples", "batch_size", "adam_betas",
                  "adam_epsilon"});
  TrainConfig c;
  read(j, "initial_lr", c.initial_lr, where);
  read(j, "lr_halving_patience", c.lr_halving_patience, where);
  read(j, "early_stop_patience", c.early_stop_patience, where);
  read(j, "max_epochs", c.max_epochs, where);
  read(j, "segment_samples", c.segment_samples, where);
  read(j, "batch_size", c.batch_size, where);
  if (j.contains("adam_betas")) {
    const Json& b = j.at("adam_betas");
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
      throw ConfigError(where + ".adam_betas: expected [beta1, beta2]");
    c.adam_beta1 = b[0].get<double>();
    c.adam_beta2 = b[1].get<double>();
  }
  read(j, "adam_epsilon", c.adam_epsilon, where);
  return c;
}

Json to_json(const StftConfig& c) {
  return Json{{"frame_len", c.frame_len}, {"hop", c.hop}};
}

StftConfig stft_config_from_json(const Json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where, {"frame_len", "hop"});
  StftConfig c;
  read(j, "frame_len", c.frame_len, where);
  read(j, "hop", c.hop, where);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (c.lps_bins() != 256)
    throw ConfigError(where + ".frame_len: the network expects 256 LPS bins");
  return c;
}

Json RunConfig::to_json() const {
  return Json{{"version", kVersion},
              {"seed", seed},
              {"model", tfcn::to_json(model)},
              {"train", tfcn::to_json(train)},
              {"stft", tfcn::to_json(stft)},
              {"paths",
               Json{{"train_manifest", paths.train_manifest},
                    {"valid_manifest", paths.valid_manifest},
                    {"stats", paths.stats},
                    {"out_dir", paths.out_dir}}}};
}

RunConfig RunConfig::from_json(const Json& j) {
  const std::string where = "run";
  require_object(j, where);
  reject_unknown(j, where, {"version", "seed", "model", "train", "stft", "paths"});
  if (!j.contains("version"))
    throw ConfigError("run.version: missing (expected " +
                      std::to_string(kVersion) + ")");
  int version = 0;
  read(j, "version", version, where);
  if (version != kVersion)
    throw ConfigError("run.version: unsupported version " +
                      std::to_string(version));
  RunConfig rc;
  read(j, "seed", rc.seed, where);
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"), "run.model");
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"), "run.train");
  if (j.contains("stft")) rc.stft = stft_config_from_json(j.at("stft"), "run.stft");
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    require_object(p, "run.paths");
    reject_unknown(p, "run.paths",
                   {"train_manifest", "valid_manifest", "stats", "out_dir"});
    read(p, "train_manifest", rc.paths.train_manifest, "run.paths");
    read(p, "valid_manifest", rc.paths.valid_manifest, "run.paths");
    read(p, "stats", rc.paths.stats, "run.paths");
    read(p, "out_dir", rc.paths.out_dir, "run.paths");
  }
  rc.train.seed = rc.seed;
  try {
    rc.train.validate(rc.stft.hop);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("run.train: ") + e.what());
  }
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config " + path.string());
  out << to_json().dump(2) << "\n";
}

}  // namespace tfcn
