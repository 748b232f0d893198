#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "conki/checkpoint.hpp"
#include "conki/data.hpp"
#include "conki/model.hpp"
#include "conki/training.hpp"

namespace conki {

/// Everything a run needs, as one JSON document. Missing keys keep their defaults;
/// unknown keys are rejected.
struct RunConfig {
  GeneratorConfig generator;
  ModelConfig model;
  TrainConfig training;
  std::string ablation = "none";

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);

  /// Sets one leaf by dotted path, e.g. "training.stage2.epochs=20". The value is parsed as
  /// JSON when possible and kept as a string otherwise.
  void set(std::string_view assignment);

  /// FNV-1a over the canonical (sorted-key, compact) dump.
  std::uint64_t hash() const;

  /// Model and training configs with the ablation switches applied.
  AblationSwitches switches() const { return AblationSwitches::parse(ablation); }
  void validate() const;
};

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace conki
