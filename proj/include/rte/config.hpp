#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/noise.hpp"
#include "rte/pbt.hpp"
#include "rte/synthetic.hpp"
#include "rte/trainer.hpp"

namespace rte {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | file
  std::filesystem::path path;        // file: training set
  std::filesystem::path test_path;   // file: clean test set
  SyntheticSpec synthetic;           // synthetic: `samples` is the training size
  std::size_t test_samples = 2000;
};

struct EvalConfig {
  bool mce = true;
  bool calibration = true;
  bool loss_split = true;
  int calibration_bins = 15;
  int histogram_bins = 64;
  std::uint64_t corruption_seed = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::string> stages{"generate", "corrupt", "train", "eval"};
  DataConfig data;
  NoiseSpec noise;
  TrainConfig train;
  EvalConfig eval;
  PbtConfig pbt;

  /// Copies data shape and class count into the architecture.
  void sync_shapes();
  void validate() const;
};

/// Schema violations, one entry per offending field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct ConfigField {
  std::string section;
  std::string key;
  std::string type;
  std::string doc;
};

/// Every accepted section.key with its type and meaning.
std::vector<ConfigField> config_schema();

/// INI-style text: [section] headers, key = value lines, ';' or '#' comments.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_string(const std::string& text);
/// Reads an INI config, or the "config" object of a run manifest (.json).
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical form: every field, schema order, round-trip precision.
std::string to_ini(const ExperimentConfig& cfg);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// "d" (flat) or "CxHxW".
FeatureShape parse_shape(const std::string& text);
std::string format_shape(const FeatureShape& shape);

std::string sha256_hex(const std::string& bytes);
/// SHA-256 of the canonical INI text.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace rte
