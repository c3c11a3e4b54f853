#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/batchnorm.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

#include "admd/data.hpp"
#include "admd/metrics.hpp"
#include "admd/models.hpp"
#include "admd/training.hpp"

namespace admd::baselines {

enum class Kind { RgbEnsemble, ModDrop, CrossModalAutoencoder, NaiveBinaryGan, EuclideanHallucination };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);
const std::vector<Kind>& all_kinds();

// --- RGB ensemble -----------------------------------------------------------------------

struct EnsembleResult {
  models::StreamEncoder first{nullptr};
  models::StreamEncoder second{nullptr};
  double first_accuracy = 0.0;  // test split
  double second_accuracy = 0.0;
  double ensemble_accuracy = 0.0;
  std::vector<nlohmann::json> log;
};

/// Two Step-1 runs on modality A that differ only in initialization and batch
/// order seeds, fused by logit averaging. Pass an already trained first
/// member to reuse it.
EnsembleResult train_rgb_ensemble(const data::Dataset& dataset, const models::EncoderConfig& encoder,
                                  const training::Step1Config& step1, std::uint64_t first_init_seed,
                                  std::uint64_t second_init_seed,
                                  std::optional<models::StreamEncoder> first = std::nullopt);

// --- ModDrop ----------------------------------------------------------------------------

struct ModDropConfig {
  training::OptimizerConfig optimizer;
  int epochs = 5;
  int batch_size = 32;
  double drop_a = 0.2;
  double drop_b = 0.2;
  /// Light element-wise dropout on both inputs, on top of modality zeroing.
  bool image_dropout = false;
  double image_dropout_rate = 0.1;
  std::uint64_t seed = 0;       // batch order
  std::uint64_t drop_seed = 0;  // modality masks
};

struct ModDropResult {
  models::StreamEncoder a{nullptr};
  models::StreamEncoder b{nullptr};
  std::vector<nlohmann::json> log;
};

/// Fine-tunes a two-stream model (copies of `a` and `b`) with cross-entropy on
/// the fused logits, zeroing each modality's whole input per sample with its
/// drop probability. drop = 0 is plain fine-tuning.
ModDropResult train_moddrop(models::StreamEncoderImpl& a, models::StreamEncoderImpl& b,
                            const data::Dataset& dataset, const ModDropConfig& config);

/// Fused two-stream scorer; `blank_b` replaces modality B by zeros.
evaluation::LogitFn two_stream_logits(models::StreamEncoder a, models::StreamEncoder b, bool blank_b = false);

// --- cross-modal autoencoder ------------------------------------------------------------

struct AutoencoderConfig {
  training::OptimizerConfig optimizer;
  int epochs = 5;
  int batch_size = 32;
  int decoder_blocks = 3;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
};

/// A -> B image translation: the backbone of an A stream followed by
/// transposed-convolution blocks (each with batch-norm) and a sigmoid output.
class CrossModalAutoencoderImpl : public torch::nn::Module {
 public:
  CrossModalAutoencoderImpl(models::StreamEncoderImpl& encoder, int decoder_blocks);

  /// clips [B, T, H, W, 3] of modality A -> reconstructed B clips, same shape.
  torch::Tensor forward(const torch::Tensor& clips);

 private:
  models::StreamEncoder encoder_{nullptr};
  std::vector<torch::nn::ConvTranspose2d> deconv_;
  std::vector<torch::nn::BatchNorm2d> norm_;
  torch::nn::Conv2d output_{nullptr};
  int frames_;
};
TORCH_MODULE(CrossModalAutoencoder);

struct AutoencoderResult {
  CrossModalAutoencoder autoencoder{nullptr};
  std::vector<nlohmann::json> log;  // per epoch: train / test reconstruction error
  double train_reconstruction_error = 0.0;
  double test_reconstruction_error = 0.0;
  double downstream_accuracy = 0.0;  // reconstructed B through the frozen B stream
  double fused_accuracy = 0.0;       // fused with the A stream
};

AutoencoderResult train_autoencoder_baseline(const data::Dataset& dataset, models::StreamEncoder a_stream,
                                             models::StreamEncoder b_stream, const AutoencoderConfig& config);

/// Scores a split by feeding reconstructed B into the B stream.
evaluation::LogitFn autoencoder_logits(CrossModalAutoencoder autoencoder, models::StreamEncoder b_stream);

double reconstruction_error(CrossModalAutoencoderImpl& autoencoder, const data::Split& split,
                            std::int64_t batch_size = 64);

// --- naive binary GAN -------------------------------------------------------------------

/// Step 2 with a real/fake discriminator: same loop, two outputs, no class
/// information in the targets.
training::Step2Result train_naive_binary_gan(models::StreamEncoder teacher, const data::Dataset& dataset,
                                             training::AdversarialConfig config,
                                             std::optional<models::StreamEncoder> a_stream = std::nullopt);

/// Held-out accuracy of a logistic-regression probe separating hallucinated
/// from teacher features (0.5 = perfectly mixed).
double feature_probe_accuracy(models::StreamEncoderImpl& hallucination, models::StreamEncoderImpl& teacher,
                              const data::Dataset& dataset, std::uint64_t seed, int epochs = 200);

// --- Euclidean hallucination ------------------------------------------------------------

struct EuclideanConfig {
  training::OptimizerConfig optimizer;
  int steps = 1000;
  int batch_size = 32;
  double feature_weight = 1.0;
  /// Weight of the cross-entropy through the frozen head.
  double class_weight = 1.0;
  int eval_every = 0;
  std::uint64_t seed = 0;
};

struct EuclideanResult {
  models::StreamEncoder hallucination{nullptr};
  std::vector<nlohmann::json> log;
  double best_validation_accuracy = 0.0;
  std::int64_t best_step = 0;
  double initial_distance = 0.0;  // mean squared feature distance on validation clips
  double final_distance = 0.0;
};

/// Step-2-shaped loop without a discriminator: the hallucination stream
/// minimizes feature_weight * mean((F_H - F_d)^2) + class_weight * CE. The
/// squared distance is averaged over feature elements, so the weights do not
/// depend on d.
EuclideanResult train_euclidean_hallucination(models::StreamEncoder teacher, const data::Dataset& dataset,
                                              const EuclideanConfig& config,
                                              std::optional<models::StreamEncoder> a_stream = std::nullopt);

/// Mean squared feature difference (over clips, frames and feature elements) between H on A and E_d on B.
double mean_feature_distance(models::StreamEncoderImpl& hallucination, models::StreamEncoderImpl& teacher,
                             const data::Split& split, std::int64_t batch_size = 64);

}  // namespace admd::baselines
