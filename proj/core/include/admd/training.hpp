#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/optim/optimizer.h>
#include <torch/types.h>

#include "admd/data.hpp"
#include "admd/models.hpp"

namespace admd::training {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | rmsprop | sgd
  double learning_rate = 1e-4;
  double beta1 = 0.0;         // 0: no momentum
  double beta2 = 0.999;
  double weight_decay = 0.0;

  bool operator==(const OptimizerConfig&) const = default;
};

std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::Tensor> params,
                                                        const OptimizerConfig& config);

// --- extended label -------------------------------------------------------------------

enum class Source { Teacher, Hallucinated };

/// [y || 0] for a teacher (privileged-modality) sample of class `class_index`,
/// [zeros(C) || 1] for a hallucinated one. Length C + 1, float32.
torch::Tensor extend_label(std::int64_t class_index, std::int64_t num_classes, Source source);

/// Index of the single 1 in extend_label (the target for an index-based cross-entropy).
std::int64_t extended_target(std::int64_t class_index, std::int64_t num_classes, Source source);

// --- Step 1 ---------------------------------------------------------------------------

struct Step1Config {
  OptimizerConfig optimizer;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;  // batch order
  /// When set, the best-validation encoder is written here after each improvement.
  std::filesystem::path checkpoint_path;
  std::string config_hash;
};

struct Step1Result {
  models::StreamEncoder encoder{nullptr};
  std::vector<nlohmann::json> log;
  double best_validation_accuracy = 0.0;
  int best_epoch = 0;
};

/// Supervised cross-entropy training of one stream on one modality. Returns
/// the best-validation encoder (a copy; the argument is left untouched).
Step1Result train_step1(models::StreamEncoder encoder, const data::Dataset& dataset,
                        data::Modality modality, const Step1Config& config);

/// Hallucination stream initialized as an exact copy of the teacher. The
/// classifier head is frozen: it stays the teacher's head for all of Step 2.
models::StreamEncoder init_hallucination_from_teacher(models::StreamEncoderImpl& teacher);

/// Same, from a checkpoint; throws CheckpointError when the stored
/// architecture differs from `expected`.
models::StreamEncoder init_hallucination_from_teacher(const std::filesystem::path& teacher_checkpoint,
                                                      const models::EncoderConfig& expected);

// --- Step 2 ---------------------------------------------------------------------------

enum class DiscriminatorTask { Extended, Binary };
enum class GeneratorObjective { LabelFlip, Ascend };

std::string to_string(DiscriminatorTask task);
DiscriminatorTask discriminator_task_from_string(const std::string& name);
std::string to_string(GeneratorObjective objective);
GeneratorObjective generator_objective_from_string(const std::string& name);

struct AdversarialConfig {
  OptimizerConfig generator;
  OptimizerConfig discriminator;
  DiscriminatorTask task = DiscriminatorTask::Extended;
  bool frame_conditioning = true;
  GeneratorObjective objective = GeneratorObjective::LabelFlip;
  int discriminator_updates_per_step = 1;
  models::DiscriminatorVariant variant = models::DiscriminatorVariant::Shallow;
  double discriminator_width_scale = 0.25;
  int steps = 1000;
  int batch_size = 32;
  /// Validation cadence in steps (0: once per pass over the training split).
  int eval_every = 0;
  std::uint64_t seed = 0;       // batch order
  std::uint64_t init_seed = 1;  // discriminator initialization
};

/// Discriminator architecture implied by the game and the encoder.
models::DiscriminatorConfig discriminator_config(const AdversarialConfig& config,
                                                 const models::EncoderConfig& encoder);

struct AdversarialState {
  models::StreamEncoder teacher{nullptr};
  models::StreamEncoder hallucination{nullptr};
  models::Discriminator discriminator{nullptr};
  std::unique_ptr<torch::optim::Optimizer> generator_optimizer;
  std::unique_ptr<torch::optim::Optimizer> discriminator_optimizer;
  AdversarialConfig config;
  std::int64_t step = 0;

  // Running means since construction.
  double mean_discriminator_loss = 0.0;
  double mean_generator_loss = 0.0;
  double mean_fake_probability = 0.0;
};

/// Freezes `teacher`, clones it into the hallucination stream and builds the
/// discriminator and both optimizers.
AdversarialState make_adversarial_state(models::StreamEncoder teacher, const AdversarialConfig& config);

struct StepLosses {
  double discriminator_loss = 0.0;  // fake term + real term
  double discriminator_fake_term = 0.0;
  double discriminator_real_term = 0.0;
  double generator_loss = 0.0;
  /// Mean softmax probability of the fake class on hallucinated frames.
  double fake_probability = 0.0;
  /// Real-vs-fake accuracy of the discriminator on this batch (before its update).
  double discriminator_accuracy = 0.0;
};

/// One discriminator update (hallucinated features held constant) followed
/// by one generator update (discriminator held constant) on the same batch.
StepLosses adversarial_step(AdversarialState& state, const data::ClipBatch& batch);

/// Per-frame discriminator inputs for a stream's features: returns the
/// flattened [B*T, d] features and the matching [B*T, T] one-hot (if conditioned).
std::pair<torch::Tensor, std::optional<torch::Tensor>> discriminator_inputs(
    const torch::Tensor& features, const data::ClipBatch& batch, bool frame_conditioning);

/// Index of the "fake" output: C for the extended game, 1 for the binary one.
std::int64_t fake_index(const models::DiscriminatorConfig& config);

struct DiscriminatorTerms {
  torch::Tensor fake_term;  // CE(D(F_H || y^t), fake)
  torch::Tensor real_term;  // CE(D(F_d || y^t), [y || 0]), or "real" in the binary game
  torch::Tensor fake_logits;
  torch::Tensor real_logits;
};

/// Both discriminator loss terms on flattened per-frame inputs. `labels` are
/// per clip [B]; inputs hold B * T rows in clip-major order.
DiscriminatorTerms discriminator_terms(models::DiscriminatorImpl& disc, const torch::Tensor& fake_input,
                                       const torch::Tensor& real_input,
                                       const std::optional<torch::Tensor>& frame_onehot,
                                       const torch::Tensor& labels);

/// Generator loss on hallucinated per-frame inputs: CE towards [y || 0]
/// (label flip) or minus the discriminator's fake term (ascend).
torch::Tensor generator_loss(models::DiscriminatorImpl& disc, const torch::Tensor& fake_input,
                             const std::optional<torch::Tensor>& frame_onehot, const torch::Tensor& labels,
                             GeneratorObjective objective, torch::Tensor* logits_out = nullptr);

struct Step2Result {
  models::StreamEncoder hallucination{nullptr};
  models::Discriminator discriminator{nullptr};
  std::vector<nlohmann::json> log;
  double best_validation_accuracy = 0.0;
  std::int64_t best_step = 0;
  std::uint64_t teacher_hash_before = 0;
  std::uint64_t teacher_hash_after = 0;
};

/// Adversarial hallucination learning against a frozen teacher. If an A
/// stream is given, checkpoint selection uses the fused (A + hallucination)
/// validation accuracy, otherwise the hallucination stream's own.
Step2Result train_step2(models::StreamEncoder teacher, const data::Dataset& dataset,
                        const AdversarialConfig& config,
                        std::optional<models::StreamEncoder> a_stream = std::nullopt);

/// Mean fake-class probability assigned by `disc` to per-frame features of `features_of` clips.
double mean_fake_probability(models::DiscriminatorImpl& disc, const torch::Tensor& features,
                             bool frame_conditioning);

/// Two-stream fusion: elementwise mean of raw logits.
torch::Tensor fuse_logits(const torch::Tensor& a, const torch::Tensor& b);

/// Cross-entropy on indices that throws TrainingError when not finite.
torch::Tensor checked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets,
                                    const char* what);

}  // namespace admd::training
