#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "admd/baselines.hpp"
#include "admd/config.hpp"
#include "admd/data.hpp"
#include "admd/evaluation.hpp"

namespace admd::pipeline {

enum class Stage { Data, Step1, Step2, Baselines, Eval, Sweep, Ablate, Report };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);
const std::vector<Stage>& all_stages();

/// Comma separated stage names ("all" selects every stage). Result is in pipeline order.
std::vector<Stage> parse_stages(const std::string& list);

/// Variable that overrides the output root given in the config.
inline constexpr const char* kOutputRootVariable = "ADMD_OUTPUT_ROOT";

struct RunOptions {
  /// Empty: the ADMD_OUTPUT_ROOT variable if set, else the config's output_dir.
  std::filesystem::path output_root;
  bool plot = true;
  std::function<void(const std::string&)> log;

  /// step1: train only this stream (the stage completes once both exist).
  std::optional<data::Modality> modality;
  /// step2: teacher checkpoint to use instead of the step1 B stream.
  std::filesystem::path teacher;
  /// baselines: kinds to run (empty: the configured kinds).
  std::vector<baselines::Kind> baseline_kinds;
  /// ablate: suites to run (empty: the configured suites).
  std::vector<evaluation::AblationSuite> ablations;
};

std::filesystem::path output_root(const config::ExperimentConfig& config, const RunOptions& options);

/// <output root>/<config hash>
std::filesystem::path run_directory(const config::ExperimentConfig& config, const RunOptions& options);

struct Artifact {
  std::string stage;
  std::string seed;  // empty for seed-independent artifacts
  std::string kind;
  std::filesystem::path path;  // relative to the run directory
};

struct ArtifactManifest {
  std::string config_hash;
  std::filesystem::path run_dir;
  std::vector<Artifact> artifacts;
  /// Stages that did work in this invocation (the rest were already complete).
  std::vector<std::string> executed;

  std::vector<Artifact> of_kind(const std::string& kind) const;
  nlohmann::json to_json() const;
};

/// Runs the requested stages in pipeline order for every configured seed.
/// Completed stages are skipped; the report is always re-rendered. Throws DependencyError naming the missing
/// prior stage, ConfigError, or TrainingError.
ArtifactManifest run_pipeline(const config::ExperimentConfig& config, const std::vector<Stage>& stages,
                              const RunOptions& options = {});

struct ReportOutput {
  std::filesystem::path markdown;
  std::filesystem::path summary;  // machine-readable key/value records
  std::filesystem::path plot;     // empty when no sweep or plotting is off
};

/// Renders comparison tables (main comparison, three ablations, noise sweep)
/// from the artifacts in `run_dir` into <run_dir>/report. Throws ReportError
/// when no evaluation report exists.
ReportOutput emit_report(const std::filesystem::path& run_dir, bool plot = true);

/// Reads the JSON manifest written by run_pipeline.
ArtifactManifest read_manifest(const std::filesystem::path& run_dir);

}  // namespace admd::pipeline
