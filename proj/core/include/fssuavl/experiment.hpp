#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fssuavl/encoder.hpp"
#include "fssuavl/eval.hpp"
#include "fssuavl/modality.hpp"
#include "fssuavl/orchestrator.hpp"
#include "fssuavl/partition.hpp"
#include "fssuavl/ssl.hpp"

namespace fssuavl {

// Where the corpora come from. An empty directory means "generate": the
// synthetic corpus is drawn from the master seed.
struct DataSpec {
  std::string train_images;
  std::string train_audio;
  std::string test_images;
  std::string test_audio;
  int synth_classes = 4;
  int synth_train_per_class = 32;
  int synth_test_per_class = 16;

  bool operator==(const DataSpec&) const = default;
};

struct ExperimentConfig {
  EncoderConfig encoder;
  SslConfig ssl;
  FeaturizeConfig featurize;
  PartitionConfig partition;
  FederationConfig federation;
  EvalConfig eval;
  DataSpec data;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/default";

  // Every problem (including missing dataset directories and a missing seed)
  // in one ConfigError, one `key: reason` per line.
  void validate() const;
  PretrainConfig pretrain() const;

  bool operator==(const ExperimentConfig&) const = default;
};

// Fully resolved JSON text (every key present), stable key order.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

// Reads a JSON config (possibly partial; omitted keys keep their defaults),
// then applies `key.path=value` overrides in order. Values are parsed as JSON
// when possible and taken as strings otherwise. partition.seed and eval.seed
// default to the master seed. Unknown keys, type mismatches and validation
// failures are all reported together in one ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text, const std::vector<std::string>& overrides = {},
                                         const std::string& origin = "<config>");
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

struct Corpora {
  Dataset train_images;
  Dataset train_audio;
  Dataset test_images;
  Dataset test_audio;
};

// Loads the configured directories, generating synthetic corpora for the
// empty ones. Requires a seed.
Corpora load_corpora(const ExperimentConfig& cfg);

}  // namespace fssuavl
