#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "admd/data.hpp"
#include "admd/metrics.hpp"
#include "admd/models.hpp"
#include "admd/training.hpp"

namespace admd::evaluation {

enum class Fusion { None, AverageLogits };

struct EvalReport {
  std::map<std::string, double> accuracy;                   // per model, test split
  std::map<std::string, std::vector<double>> per_class;     // per model
  std::optional<double> fused_accuracy;
  std::vector<double> fused_per_class;
  std::optional<double> fake_probability;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string timestamp;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Accuracy of every named model on `split`; with AverageLogits the fused
/// (mean-of-logits) model is scored too. Throws DataError if any model's
/// class count differs from `num_classes` or a label falls outside it.
EvalReport evaluate(const std::vector<std::pair<std::string, LogitFn>>& models, const data::Split& split,
                    Fusion fusion, int num_classes);

/// Per-class recall for logits [N, C] against labels [N].
std::vector<double> per_class_accuracy(const torch::Tensor& logits, const torch::Tensor& labels, int num_classes);

// --- noise sweep ----------------------------------------------------------------------

struct SweepPoint {
  double variance = 0.0;
  bool blank = false;  // the "void" arm: modality B replaced by zeros
  double two_stream_accuracy = 0.0;
  double admd_fused_accuracy = 0.0;
  double fake_probability = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // strictly increasing variance
  std::optional<SweepPoint> blank;
  std::optional<double> switch_point;

  nlohmann::json to_json() const;
  static SweepResult from_json(const nlohmann::json& j);
};

struct SweepModels {
  models::StreamEncoder a{nullptr};              // two-stream, modality A
  models::StreamEncoder b{nullptr};              // two-stream, modality B (the Step-2 teacher)
  models::StreamEncoder hallucination{nullptr};  // ADMD
  models::Discriminator discriminator{nullptr};  // Step-2 discriminator
};

struct SweepOptions {
  std::vector<double> variances = {0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  bool include_blank = true;
  /// Every grid point reuses this seed (common random numbers across levels).
  std::uint64_t noise_seed = 0;
  double threshold = 0.5;
  double margin = 0.1;
};

/// Corrupts modality B of `split` with speckle noise at each variance and
/// scores the two-stream model; the ADMD model (A + hallucination) ignores B
/// and is scored once. Records the discriminator's mean fake-class
/// probability on teacher features of the corrupted B clips.
SweepResult noise_sweep(const SweepModels& models, const data::Split& split, const SweepOptions& options);

/// Smallest variance whose mean fake probability exceeds threshold + margin.
std::optional<double> detect_switch_point(const SweepResult& sweep, double threshold = 0.5, double margin = 0.1);

/// Smallest variance whose two-stream accuracy is more than `drop` below the clean (first) point.
std::optional<double> first_accuracy_drop(const SweepResult& sweep, double drop = 0.10);

// --- ablations ------------------------------------------------------------------------

enum class AblationSuite { BottleneckSize, BottleneckVariant, DiscriminatorTask };

std::string to_string(AblationSuite suite);
AblationSuite ablation_suite_from_string(const std::string& name);

struct AblationArm {
  std::string name;
  models::EncoderConfig encoder;
  training::AdversarialConfig adversarial;
};

/// Arms of a suite, derived from the base configuration.
std::vector<AblationArm> ablation_arms(AblationSuite suite, const models::EncoderConfig& encoder,
                                       const training::AdversarialConfig& adversarial);

struct AblationRow {
  std::string arm;
  double teacher_accuracy = 0.0;        // B stream, test split
  double hallucination_accuracy = 0.0;  // H on A through the frozen head, test split
  double fused_accuracy = 0.0;          // A stream + H, test split (0 without an A stream)
  double fake_probability = 0.0;        // discriminator on test hallucinated features
  nlohmann::json to_json() const;
};

struct AblationTable {
  AblationSuite suite = AblationSuite::BottleneckSize;
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
};

/// Supplies the Step-1 B-stream teacher for an encoder configuration (lets
/// callers cache teachers across arms and runs).
using TeacherProvider = std::function<models::StreamEncoder(const models::EncoderConfig&)>;

/// Returns a finished Step-2 result for an arm when one already exists.
using Step2Cache = std::function<std::optional<training::Step2Result>(const AblationArm&)>;

/// Runs Step 2 for every arm; all arms share `dataset` and the seeds in `adversarial`.
AblationTable run_ablation(AblationSuite suite, const data::Dataset& dataset, const models::EncoderConfig& encoder,
                           const training::AdversarialConfig& adversarial, const TeacherProvider& teacher_for,
                           std::optional<models::StreamEncoder> a_stream = std::nullopt,
                           const Step2Cache& cached = {});

// --- gradient checks ------------------------------------------------------------------

/// Largest elementwise relative error |g - n| / max(|g|, |n|, floor) between
/// analytic gradients of `loss` and fourth-order central finite differences
/// (step h). Parameters should be double precision.
double gradcheck(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& params,
                 double h = 1e-5, double floor = 1e-6);

struct ToySizes {
  int num_classes = 3;
  int frames = 2;
  int image_size = 6;
  int width = 2;
  int bottleneck_dim = 4;
  int batch = 2;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double step1 = 0.0;
  double discriminator = 0.0;  // discriminator update term, w.r.t. discriminator parameters
  double generator = 0.0;      // label-flipped generator term, w.r.t. hallucination parameters
  std::int64_t encoder_parameters = 0;
  std::int64_t discriminator_parameters = 0;
};

/// Builds toy double-precision encoders and a toy conditioned discriminator
/// and gradchecks the three training losses.
GradcheckReport gradcheck_losses(const ToySizes& sizes = {});

}  // namespace admd::evaluation
