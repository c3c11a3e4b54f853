#include "admd/training.hpp"

#include <cmath>

#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/metrics.hpp"

namespace admd::training {
namespace F = torch::nn::functional;
using json = nlohmann::json;

std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::Tensor> params,
                                                        const OptimizerConfig& config) {
  if (config.kind == "adam") {
    return std::make_unique<torch::optim::Adam>(
        std::move(params), torch::optim::AdamOptions(config.learning_rate)
                               .betas({config.beta1, config.beta2})
                               .weight_decay(config.weight_decay));
  }
  if (config.kind == "rmsprop") {
    return std::make_unique<torch::optim::RMSprop>(
        std::move(params),
        torch::optim::RMSpropOptions(config.learning_rate).alpha(config.beta2).weight_decay(config.weight_decay));
  }
  if (config.kind == "sgd") {
    return std::make_unique<torch::optim::SGD>(
        std::move(params),
        torch::optim::SGDOptions(config.learning_rate).momentum(config.beta1).weight_decay(config.weight_decay));
  }
  throw ConfigError("unknown optimizer '" + config.kind + "' (expected adam, rmsprop or sgd)");
}

torch::Tensor checked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets,
                                    const char* what) {
  auto loss = F::cross_entropy(logits, targets);
  if (!std::isfinite(loss.item<double>())) throw TrainingError(std::string(what) + " became non-finite");
  return loss;
}

// --- extended label ---------------------------------------------------------------------

std::int64_t extended_target(std::int64_t class_index, std::int64_t num_classes, Source source) {
  if (num_classes < 1) throw LabelError("number of classes must be positive");
  if (class_index < 0 || class_index >= num_classes) {
    throw LabelError("class index " + std::to_string(class_index) + " outside [0, " +
                     std::to_string(num_classes) + ")");
  }
  return source == Source::Teacher ? class_index : num_classes;
}

torch::Tensor extend_label(std::int64_t class_index, std::int64_t num_classes, Source source) {
  auto label = torch::zeros({num_classes + 1});
  label[extended_target(class_index, num_classes, source)] = 1.0;
  return label;
}

// --- Step 1 -------------------------------------------------------------------------------

Step1Result train_step1(models::StreamEncoder encoder, const data::Dataset& dataset, data::Modality modality,
                        const Step1Config& config) {
  if (encoder->config().num_classes != dataset.num_classes) {
    throw ConfigError("encoder has " + std::to_string(encoder->config().num_classes) +
                      " classes but the dataset has " + std::to_string(dataset.num_classes));
  }
  Step1Result result;
  auto model = models::clone_encoder(*encoder);
  auto best = models::clone_encoder(*encoder);
  auto optimizer = make_optimizer(model->parameters(), config.optimizer);
  std::mt19937_64 order(config.seed);
  const auto scorer = evaluation::stream_logits(model, modality);
  const bool has_validation = dataset.validation.size() > 0;
  bool saved = false;
  result.best_validation_accuracy =
      has_validation ? evaluation::split_accuracy(scorer, dataset.validation) : 0.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    model->train();
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (const auto& indices : data::make_batches(dataset.train.size(), config.batch_size, &order)) {
      auto batch = dataset.train.gather(indices);
      optimizer->zero_grad();
      auto logits = model->forward(batch.modality(modality)).logits;
      torch::Tensor loss;
      try {
        loss = checked_cross_entropy(logits, batch.class_label, "step-1 cross-entropy");
      } catch (const TrainingError& e) {
        throw TrainingError(e.what(), saved ? config.checkpoint_path.string() : std::string());
      }
      loss.backward();
      optimizer->step();
      loss_sum += loss.item<double>() * static_cast<double>(batch.size());
      correct += logits.argmax(1).eq(batch.class_label).sum().item<std::int64_t>();
      seen += batch.size();
    }
    const double val_acc = has_validation ? evaluation::split_accuracy(scorer, dataset.validation) : 0.0;
    result.log.push_back(json{{"stage", "step1"},
                              {"modality", data::to_string(modality)},
                              {"epoch", epoch},
                              {"train_loss", loss_sum / std::max<std::int64_t>(1, seen)},
                              {"train_accuracy", static_cast<double>(correct) / std::max<std::int64_t>(1, seen)},
                              {"validation_accuracy", val_acc}});
    if (!has_validation || epoch == 1 || val_acc > result.best_validation_accuracy) {
      result.best_validation_accuracy = std::max(result.best_validation_accuracy, val_acc);
      result.best_epoch = epoch;
      models::copy_state(*model, *best);
      if (!config.checkpoint_path.empty()) {
        models::save_encoder(config.checkpoint_path, *best, config.config_hash);
        saved = true;
      }
    }
  }
  result.encoder = best;
  return result;
}

models::StreamEncoder init_hallucination_from_teacher(models::StreamEncoderImpl& teacher) {
  auto h = models::clone_encoder(teacher);
  for (auto& p : h->head_parameters()) p.set_requires_grad(false);
  return h;
}

models::StreamEncoder init_hallucination_from_teacher(const std::filesystem::path& teacher_checkpoint,
                                                      const models::EncoderConfig& expected) {
  models::StreamEncoder h(expected);
  models::load_checkpoint(teacher_checkpoint, *h, "encoder", expected.to_json());
  for (auto& p : h->head_parameters()) p.set_requires_grad(false);
  return h;
}

// --- Step 2 -------------------------------------------------------------------------------

std::string to_string(DiscriminatorTask task) {
  return task == DiscriminatorTask::Extended ? "extended" : "binary";
}

DiscriminatorTask discriminator_task_from_string(const std::string& name) {
  if (name == "extended") return DiscriminatorTask::Extended;
  if (name == "binary") return DiscriminatorTask::Binary;
  throw ConfigError("unknown discriminator task '" + name + "' (expected extended or binary)");
}

std::string to_string(GeneratorObjective objective) {
  return objective == GeneratorObjective::LabelFlip ? "label-flip" : "ascend";
}

GeneratorObjective generator_objective_from_string(const std::string& name) {
  if (name == "label-flip") return GeneratorObjective::LabelFlip;
  if (name == "ascend") return GeneratorObjective::Ascend;
  throw ConfigError("unknown generator objective '" + name + "' (expected label-flip or ascend)");
}

models::DiscriminatorConfig discriminator_config(const AdversarialConfig& config,
                                                 const models::EncoderConfig& encoder) {
  models::DiscriminatorConfig d;
  d.variant = config.variant;
  d.feature_dim = encoder.feature_dim();
  d.conditioning_dim = (config.frame_conditioning && encoder.frames > 1) ? encoder.frames : 0;
  d.num_outputs = config.task == DiscriminatorTask::Extended ? encoder.num_classes + 1 : 2;
  d.width_scale = config.discriminator_width_scale;
  return d;
}

std::int64_t fake_index(const models::DiscriminatorConfig& config) { return config.num_outputs - 1; }

AdversarialState make_adversarial_state(models::StreamEncoder teacher, const AdversarialConfig& config) {
  AdversarialState state;
  state.config = config;
  state.teacher = teacher;
  state.teacher->eval();
  for (auto& p : state.teacher->parameters()) p.set_requires_grad(false);
  state.hallucination = init_hallucination_from_teacher(*teacher);
  for (auto& p : state.hallucination->trunk_parameters()) p.set_requires_grad(true);
  state.discriminator =
      models::build_discriminator(discriminator_config(config, teacher->config()), config.init_seed);
  state.generator_optimizer = make_optimizer(state.hallucination->trunk_parameters(), config.generator);
  state.discriminator_optimizer = make_optimizer(state.discriminator->parameters(), config.discriminator);
  return state;
}

std::pair<torch::Tensor, std::optional<torch::Tensor>> discriminator_inputs(
    const torch::Tensor& features, const data::ClipBatch& batch, bool frame_conditioning) {
  const auto b = features.size(0), t = features.size(1);
  auto flat = features.reshape({b * t, features.size(2)});
  if (!frame_conditioning || t == 1) return {flat, std::nullopt};
  return {flat, batch.frame_index_onehot.reshape({b * t, t}).to(features.dtype())};
}

namespace {

struct GameTargets {
  torch::Tensor real;  // targets for teacher frames, also what the generator aims for
  torch::Tensor fake;  // targets for hallucinated frames
};

GameTargets game_targets(const models::DiscriminatorConfig& dc, const torch::Tensor& labels, std::int64_t rows) {
  if (labels.size(0) == 0 || rows % labels.size(0) != 0) {
    throw ShapeError("discriminator inputs: " + std::to_string(rows) + " rows for " +
                     std::to_string(labels.size(0)) + " clips");
  }
  auto per_frame = labels.repeat_interleave(rows / labels.size(0));
  GameTargets t;
  if (dc.num_outputs == 2) {
    t.real = torch::zeros_like(per_frame);
  } else {
    const auto classes = dc.num_outputs - 1;
    if (per_frame.min().item<std::int64_t>() < 0 || per_frame.max().item<std::int64_t>() >= classes) {
      throw LabelError("batch label outside [0, " + std::to_string(classes) + ")");
    }
    t.real = per_frame;
  }
  t.fake = torch::full_like(per_frame, fake_index(dc));
  return t;
}

double real_fake_accuracy(const torch::Tensor& fake_logits, const torch::Tensor& real_logits, std::int64_t fake) {
  auto fake_ok = fake_logits.argmax(1).eq(fake).to(torch::kFloat64).sum();
  auto real_ok = real_logits.argmax(1).ne(fake).to(torch::kFloat64).sum();
  return ((fake_ok + real_ok) / static_cast<double>(fake_logits.size(0) + real_logits.size(0))).item<double>();
}

}  // namespace

DiscriminatorTerms discriminator_terms(models::DiscriminatorImpl& disc, const torch::Tensor& fake_input,
                                       const torch::Tensor& real_input,
                                       const std::optional<torch::Tensor>& frame_onehot,
                                       const torch::Tensor& labels) {
  const auto targets = game_targets(disc.config(), labels, fake_input.size(0));
  DiscriminatorTerms out;
  out.fake_logits = models::discriminator_forward(disc, fake_input, frame_onehot);
  out.real_logits = models::discriminator_forward(disc, real_input, frame_onehot);
  out.fake_term = checked_cross_entropy(out.fake_logits, targets.fake, "discriminator fake term");
  out.real_term = checked_cross_entropy(out.real_logits, targets.real, "discriminator real term");
  return out;
}

torch::Tensor generator_loss(models::DiscriminatorImpl& disc, const torch::Tensor& fake_input,
                             const std::optional<torch::Tensor>& frame_onehot, const torch::Tensor& labels,
                             GeneratorObjective objective, torch::Tensor* logits_out) {
  const auto targets = game_targets(disc.config(), labels, fake_input.size(0));
  auto logits = models::discriminator_forward(disc, fake_input, frame_onehot);
  if (logits_out) *logits_out = logits;
  if (objective == GeneratorObjective::LabelFlip) return checked_cross_entropy(logits, targets.real, "generator loss");
  return -checked_cross_entropy(logits, targets.fake, "generator loss");
}

StepLosses adversarial_step(AdversarialState& state, const data::ClipBatch& batch) {
  auto& cfg = state.config;
  auto& disc = *state.discriminator;
  const bool conditioned = disc.config().conditioning_dim > 0;
  const auto fake_target = fake_index(disc.config());

  torch::Tensor real_features;
  {
    torch::NoGradGuard no_grad;
    real_features = state.teacher->features(batch.modality_b);
  }
  auto hallucinated = state.hallucination->features(batch.modality_a);
  auto [fake_in, onehot] = discriminator_inputs(hallucinated, batch, conditioned);
  auto real_in = discriminator_inputs(real_features, batch, conditioned).first;

  StepLosses out;
  // Discriminator: hallucinated features are constants here.
  auto fake_const = fake_in.detach();
  for (int k = 0; k < std::max(1, cfg.discriminator_updates_per_step); ++k) {
    state.discriminator_optimizer->zero_grad();
    auto terms = discriminator_terms(disc, fake_const, real_in, onehot, batch.class_label);
    auto d_loss = terms.fake_term + terms.real_term;
    if (k == 0) {
      out.discriminator_fake_term = terms.fake_term.item<double>();
      out.discriminator_real_term = terms.real_term.item<double>();
      out.discriminator_loss = d_loss.item<double>();
      out.discriminator_accuracy =
          real_fake_accuracy(terms.fake_logits.detach(), terms.real_logits.detach(), fake_target);
    }
    d_loss.backward();
    state.discriminator_optimizer->step();
  }

  // Generator: discriminator parameters are not stepped here.
  state.generator_optimizer->zero_grad();
  torch::Tensor logits;
  auto g_loss = generator_loss(disc, fake_in, onehot, batch.class_label, cfg.objective, &logits);
  g_loss.backward();
  state.generator_optimizer->step();
  state.discriminator_optimizer->zero_grad();

  out.generator_loss = g_loss.item<double>();
  out.fake_probability = torch::softmax(logits.detach(), 1).select(1, fake_target).mean().item<double>();

  ++state.step;
  const double n = static_cast<double>(state.step);
  state.mean_discriminator_loss += (out.discriminator_loss - state.mean_discriminator_loss) / n;
  state.mean_generator_loss += (out.generator_loss - state.mean_generator_loss) / n;
  state.mean_fake_probability += (out.fake_probability - state.mean_fake_probability) / n;
  return out;
}

double mean_fake_probability(models::DiscriminatorImpl& disc, const torch::Tensor& features,
                             bool frame_conditioning) {
  torch::NoGradGuard no_grad;
  const auto b = features.size(0), t = features.size(1);
  auto flat = features.reshape({b * t, features.size(2)});
  std::optional<torch::Tensor> onehot;
  if (frame_conditioning && disc.config().conditioning_dim > 0) {
    onehot = data::frame_onehot(b, t).reshape({b * t, t});
  }
  auto logits = models::discriminator_forward(disc, flat, onehot);
  return torch::softmax(logits, 1).select(1, fake_index(disc.config())).mean().item<double>();
}

Step2Result train_step2(models::StreamEncoder teacher, const data::Dataset& dataset,
                        const AdversarialConfig& config, std::optional<models::StreamEncoder> a_stream) {
  if (teacher->config().num_classes != dataset.num_classes) {
    throw ConfigError("teacher has " + std::to_string(teacher->config().num_classes) +
                      " classes but the dataset has " + std::to_string(dataset.num_classes));
  }
  Step2Result result;
  result.teacher_hash_before = models::parameter_hash(*teacher);
  auto state = make_adversarial_state(teacher, config);
  auto best_h = models::clone_encoder(*state.hallucination);
  auto best_d = models::build_discriminator(state.discriminator->config(), config.init_seed);
  models::copy_state(*state.discriminator, *best_d);

  const auto& val = dataset.validation.size() > 0 ? dataset.validation : dataset.train;
  const bool conditioned = state.discriminator->config().conditioning_dim > 0;
  auto h_scorer = evaluation::stream_logits(state.hallucination, data::Modality::A);
  evaluation::LogitFn selection_scorer = h_scorer;
  if (a_stream) {
    auto a_scorer = evaluation::stream_logits(*a_stream, data::Modality::A);
    selection_scorer = [a_scorer, h_scorer](const data::ClipBatch& b) {
      return fuse_logits(a_scorer(b), h_scorer(b));
    };
  }
  auto validate = [&](std::int64_t step, double d_loss, double g_loss, double fake_prob, double d_acc) {
    const double h_acc = evaluation::split_accuracy(h_scorer, val);
    const double sel_acc = a_stream ? evaluation::split_accuracy(selection_scorer, val) : h_acc;
    torch::Tensor h_features;
    {
      torch::NoGradGuard no_grad;
      h_features = state.hallucination->features(val.modality_a);
    }
    json rec{{"stage", "step2"},
             {"step", step},
             {"discriminator_loss", d_loss},
             {"generator_loss", g_loss},
             {"train_fake_probability", fake_prob},
             {"discriminator_accuracy", d_acc},
             {"hallucination_accuracy", h_acc},
             {"validation_fake_probability",
              mean_fake_probability(*state.discriminator, h_features, conditioned)}};
    if (a_stream) rec["fused_accuracy"] = sel_acc;
    result.log.push_back(rec);
    if (step == 0 || sel_acc > result.best_validation_accuracy) {
      result.best_validation_accuracy = sel_acc;
      result.best_step = step;
      models::copy_state(*state.hallucination, *best_h);
      models::copy_state(*state.discriminator, *best_d);
    }
  };

  validate(0, 0.0, 0.0, 0.0, 0.0);
  std::mt19937_64 order(config.seed);
  const auto per_epoch =
      (dataset.train.size() + config.batch_size - 1) / std::max(1, config.batch_size);
  const auto every = config.eval_every > 0 ? config.eval_every : per_epoch;
  double d_sum = 0, g_sum = 0, p_sum = 0, a_sum = 0;
  int window = 0;
  std::int64_t step = 0;
  while (step < config.steps) {
    for (const auto& indices : data::make_batches(dataset.train.size(), config.batch_size, &order)) {
      if (step >= config.steps) break;
      const auto losses = adversarial_step(state, dataset.train.gather(indices));
      ++step;
      d_sum += losses.discriminator_loss;
      g_sum += losses.generator_loss;
      p_sum += losses.fake_probability;
      a_sum += losses.discriminator_accuracy;
      ++window;
      if (step % every == 0 || step == config.steps) {
        validate(step, d_sum / window, g_sum / window, p_sum / window, a_sum / window);
        d_sum = g_sum = p_sum = a_sum = 0;
        window = 0;
      }
    }
  }
  result.teacher_hash_after = models::parameter_hash(*teacher);
  result.hallucination = best_h;
  for (auto& p : result.hallucination->head_parameters()) p.set_requires_grad(false);
  result.discriminator = best_d;
  return result;
}

torch::Tensor fuse_logits(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError("fuse_logits: shape mismatch (" + std::to_string(a.dim()) + "-d vs " +
                     std::to_string(b.dim()) + "-d, first dims " + std::to_string(a.size(0)) + " vs " +
                     std::to_string(b.size(0)) + ")");
  }
  return (a + b) / 2.0;
}

}  // namespace admd::training
