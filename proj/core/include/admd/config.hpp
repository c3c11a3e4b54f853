#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "admd/baselines.hpp"
#include "admd/data.hpp"
#include "admd/evaluation.hpp"
#include "admd/models.hpp"
#include "admd/training.hpp"

namespace admd::config {

inline constexpr int kConfigVersion = 1;

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | directory
  std::filesystem::path directory;   // for source = directory
  data::SyntheticTaskSpec synthetic;

  bool operator==(const DatasetSection&) const = default;
};

struct ModelSection {
  std::vector<int> widths = {32, 64, 128};
  double width_multiplier = 1.0;
  int units_per_stage = 2;
  int feature_width = 2048;
  models::BottleneckVariant bottleneck = models::BottleneckVariant::PoolConv;
  int bottleneck_dim = 128;
  models::DiscriminatorVariant discriminator = models::DiscriminatorVariant::Shallow;
  /// scaled: literal widths x 0.25 x width_multiplier; literal: as published.
  std::string discriminator_widths = "scaled";

  double discriminator_width_scale() const;
  bool operator==(const ModelSection&) const = default;
};

struct Step1Section {
  training::OptimizerConfig optimizer;
  int epochs = 10;
  int batch_size = 32;
  bool operator==(const Step1Section&) const = default;
};

struct Step2Section {
  training::OptimizerConfig generator;
  training::OptimizerConfig discriminator;
  int steps = 1000;
  int batch_size = 32;
  int discriminator_updates_per_step = 1;
  training::GeneratorObjective objective = training::GeneratorObjective::LabelFlip;
  training::DiscriminatorTask task = training::DiscriminatorTask::Extended;
  bool frame_conditioning = true;
  int eval_every = 0;
  bool operator==(const Step2Section&) const = default;
};

struct BaselinesSection {
  std::vector<baselines::Kind> kinds = baselines::all_kinds();
  double moddrop_drop_a = 0.2;
  double moddrop_drop_b = 0.2;
  bool moddrop_image_dropout = false;
  double moddrop_image_dropout_rate = 0.1;
  int moddrop_epochs = 5;
  training::OptimizerConfig moddrop_optimizer;
  int autoencoder_decoder_blocks = 3;
  int autoencoder_epochs = 5;
  training::OptimizerConfig autoencoder_optimizer;
  double euclidean_feature_weight = 1.0;
  double euclidean_class_weight = 1.0;
  std::vector<double> euclidean_sweep = {0.1, 1.0, 10.0};
  bool operator==(const BaselinesSection&) const = default;
};

struct EvaluationSection {
  std::vector<double> sweep = {0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  bool include_blank = true;
  double threshold = 0.5;
  double margin = 0.1;
  std::vector<evaluation::AblationSuite> ablations = {evaluation::AblationSuite::BottleneckSize,
                                                      evaluation::AblationSuite::BottleneckVariant,
                                                      evaluation::AblationSuite::DiscriminatorTask};
  bool operator==(const EvaluationSection&) const = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::vector<std::uint64_t> seeds = {0};
  DatasetSection dataset;
  ModelSection model;
  Step1Section step1;
  Step2Section step2;
  BaselinesSection baselines;
  EvaluationSection evaluation;
  /// Not part of the hash.
  std::filesystem::path output_dir = "runs";

  /// Throws ConfigError listing every problem found.
  void validate() const;

  /// Stream architecture; C, T and image size come from the dataset section.
  models::EncoderConfig encoder(int num_classes, int frames, int image_size) const;
  training::Step1Config step1_config(std::uint64_t seed) const;
  training::AdversarialConfig adversarial_config(std::uint64_t seed) const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Full parse: unknown keys, type errors and invalid values are all collected
/// into one ConfigError. Missing keys take their defaults.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& yaml);

/// YAML text with every field spelled out.
std::string serialize(const ExperimentConfig& config);

/// Canonical JSON (sorted keys, output directory excluded).
nlohmann::json canonical_json(const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over the canonical JSON text.
std::string config_hash(const ExperimentConfig& config);

/// Synthetic task spec from a standalone YAML file (the keys of dataset.synthetic).
data::SyntheticTaskSpec parse_synthetic_spec(const std::filesystem::path& path);

}  // namespace admd::config
