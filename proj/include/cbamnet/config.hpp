#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cbamnet/backbone.hpp"
#include "cbamnet/data.hpp"
#include "cbamnet/train.hpp"

namespace cbamnet {

constexpr int kConfigSchemaVersion = 1;

enum class Precision { F32, F64 };

struct RealDatasetConfig {
  std::filesystem::path manifest;
  std::filesystem::path image_root;
};

struct DatasetConfig {
  std::optional<SyntheticSpec> synthetic;
  uint64_t synthetic_seed = 0;
  std::optional<RealDatasetConfig> real;
};

struct EvalConfig {
  bool csv = true;
  bool svg = true;
  bool attention_maps = false;
};

struct AblationConfig {
  std::vector<PlacementSet> placements;
  std::vector<int> one_stage_epochs;  // length 1 when present
  std::vector<int> two_stage_epochs;  // length 2 when present
};

// A parsed and fully validated experiment definition. Parsing is strict:
// unknown keys anywhere are errors carrying the offending field path, and
// referenced paths must exist.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  uint64_t seed = 0;
  Precision precision = Precision::F32;
  DatasetConfig dataset;
  SplitFractions split;
  std::string model_preset;  // empty when the model section is explicit
  ModelSpec model;
  TrainingPlan training;  // seed filled from the top-level seed
  EvalConfig evaluation;
  std::optional<AblationConfig> ablation;
  uint64_t digest = 0;  // over the canonical config serialization
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);

}  // namespace cbamnet
