#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/config.hpp"

namespace rte {

inline constexpr const char* kLabVersion = "1.0.0";
inline constexpr const char* kOutputRootVariable = "RTE_OUTPUT_ROOT";

/// $RTE_OUTPUT_ROOT, or "runs" under the working directory.
std::filesystem::path default_output_root();

/// <root>/<first 16 hex digits of the config hash>.
std::filesystem::path run_directory(const std::filesystem::path& root, const ExperimentConfig& cfg);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
  std::uint64_t steps = 0;
};

struct Manifest {
  std::string name;
  std::string config_hash;
  nlohmann::json config;
  nlohmann::json seeds;
  nlohmann::json versions;
  nlohmann::json dataset;
  std::map<std::string, std::string> artifacts;  // role -> path relative to the run directory
  std::vector<StageTiming> timings;
  std::string status = "pending";  // pending | complete | failed
  std::string error;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

/// Runs the configured stages into `run_dir`, which is created. On failure
/// the artifacts written so far are kept, the manifest records status
/// "failed" with the error, and the exception is rethrown.
Manifest run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& run_dir, std::ostream* log = nullptr);

struct ReportRow {
  std::string run;
  std::string config;
  double accuracy = 0.0;
  double mce = 0.0;
  double ece = 0.0;
  double l_q = 0.0;
  double jsd = 0.0;
  double ecr = 0.0;
  double total = 0.0;
};

/// One row per completed run directory; throws if an artifact is missing.
std::vector<ReportRow> collect_report(std::span<const std::filesystem::path> runs);
void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows);
void write_report_text(std::ostream& os, const std::vector<ReportRow>& rows);

/// "table5": component ablations and alternative pseudo-label strategies.
/// "table9": N* = 1..8 with synchronized batches of 128.
/// "table10": N* = 1 with an unsynchronized ECR batch of 32..1024.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_preset(const std::string& preset,
                                                                      const ExperimentConfig& base);
std::vector<std::string> ablation_presets();

}  // namespace rte
