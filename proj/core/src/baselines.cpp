#include "admd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"

namespace admd::baselines {
namespace nn = torch::nn;
namespace F = torch::nn::functional;
using json = nlohmann::json;

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::RgbEnsemble: return "rgb-ensemble";
    case Kind::ModDrop: return "moddrop";
    case Kind::CrossModalAutoencoder: return "cross-modal-autoencoder";
    case Kind::NaiveBinaryGan: return "naive-binary-gan";
    case Kind::EuclideanHallucination: return "euclidean-hallucination";
  }
  return "?";
}

const std::vector<Kind>& all_kinds() {
  static const std::vector<Kind> kinds = {Kind::RgbEnsemble, Kind::ModDrop, Kind::CrossModalAutoencoder,
                                          Kind::NaiveBinaryGan, Kind::EuclideanHallucination};
  return kinds;
}

Kind kind_from_string(const std::string& name) {
  for (Kind k : all_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown baseline kind '" + name +
                    "' (expected rgb-ensemble, moddrop, cross-modal-autoencoder, naive-binary-gan or "
                    "euclidean-hallucination)");
}

// --- RGB ensemble -----------------------------------------------------------------------

EnsembleResult train_rgb_ensemble(const data::Dataset& dataset, const models::EncoderConfig& encoder,
                                  const training::Step1Config& step1, std::uint64_t first_init_seed,
                                  std::uint64_t second_init_seed, std::optional<models::StreamEncoder> first) {
  EnsembleResult result;
  auto cfg1 = step1;
  if (first) {
    result.first = *first;
  } else {
    auto r = training::train_step1(models::build_encoder(encoder, first_init_seed), dataset, data::Modality::A, cfg1);
    result.first = r.encoder;
    for (auto rec : r.log) {
      rec["member"] = 1;
      result.log.push_back(rec);
    }
  }
  auto cfg2 = step1;
  cfg2.checkpoint_path.clear();
  if (second_init_seed != first_init_seed) cfg2.seed = step1.seed ^ splitmix64(second_init_seed);
  auto r2 = training::train_step1(models::build_encoder(encoder, second_init_seed), dataset, data::Modality::A, cfg2);
  result.second = r2.encoder;
  for (auto rec : r2.log) {
    rec["member"] = 2;
    result.log.push_back(rec);
  }

  auto s1 = evaluation::stream_logits(result.first, data::Modality::A);
  auto s2 = evaluation::stream_logits(result.second, data::Modality::A);
  result.first_accuracy = evaluation::split_accuracy(s1, dataset.test);
  result.second_accuracy = evaluation::split_accuracy(s2, dataset.test);
  result.ensemble_accuracy = evaluation::split_accuracy(
      [s1, s2](const data::ClipBatch& b) { return training::fuse_logits(s1(b), s2(b)); }, dataset.test);
  return result;
}

// --- ModDrop ----------------------------------------------------------------------------

evaluation::LogitFn two_stream_logits(models::StreamEncoder a, models::StreamEncoder b, bool blank_b) {
  return [a, b, blank_b](const data::ClipBatch& batch) mutable {
    auto xb = blank_b ? torch::zeros_like(batch.modality_b) : batch.modality_b;
    return training::fuse_logits(a->forward(batch.modality_a).logits, b->forward(xb).logits);
  };
}

ModDropResult train_moddrop(models::StreamEncoderImpl& a, models::StreamEncoderImpl& b,
                            const data::Dataset& dataset, const ModDropConfig& config) {
  if (!(config.drop_a >= 0.0 && config.drop_a < 1.0) || !(config.drop_b >= 0.0 && config.drop_b < 1.0)) {
    throw ConfigError("moddrop drop probability must lie in [0, 1)");
  }
  ModDropResult result;
  result.a = models::clone_encoder(a);
  result.b = models::clone_encoder(b);
  auto params = result.a->parameters();
  for (auto& p : result.b->parameters()) params.push_back(p);
  auto optimizer = training::make_optimizer(params, config.optimizer);
  std::mt19937_64 order(config.seed);
  std::mt19937_64 drops(config.drop_seed);
  std::bernoulli_distribution drop_a(config.drop_a), drop_b(config.drop_b);
  auto mask_gen = make_torch_generator(config.drop_seed ^ 0x5bd1e995ULL);

  auto zero_mask = [](std::int64_t n, auto& dist, auto& engine) {
    auto keep = torch::ones({n, 1, 1, 1, 1});
    auto acc = keep.accessor<float, 5>();
    for (std::int64_t i = 0; i < n; ++i) {
      if (dist(engine)) acc[i][0][0][0][0] = 0.0f;
    }
    return keep;
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::int64_t seen = 0, dropped_a = 0, dropped_b = 0;
    for (const auto& indices : data::make_batches(dataset.train.size(), config.batch_size, &order)) {
      auto batch = dataset.train.gather(indices);
      const auto n = batch.size();
      auto ma = zero_mask(n, drop_a, drops);
      auto mb = zero_mask(n, drop_b, drops);
      dropped_a += n - ma.sum().item<std::int64_t>();
      dropped_b += n - mb.sum().item<std::int64_t>();
      auto xa = batch.modality_a * ma;
      auto xb = batch.modality_b * mb;
      if (config.image_dropout && config.image_dropout_rate > 0.0) {
        const double keep = 1.0 - config.image_dropout_rate;
        xa = xa * torch::bernoulli(torch::full_like(xa, keep), mask_gen) / keep;
        xb = xb * torch::bernoulli(torch::full_like(xb, keep), mask_gen) / keep;
      }
      optimizer->zero_grad();
      auto logits = training::fuse_logits(result.a->forward(xa).logits, result.b->forward(xb).logits);
      auto loss = training::checked_cross_entropy(logits, batch.class_label, "moddrop cross-entropy");
      loss.backward();
      optimizer->step();
      loss_sum += loss.item<double>() * static_cast<double>(n);
      seen += n;
    }
    const auto val = dataset.validation.size() > 0 ? &dataset.validation : &dataset.train;
    result.log.push_back(json{
        {"stage", "moddrop"},
        {"epoch", epoch},
        {"train_loss", loss_sum / std::max<std::int64_t>(1, seen)},
        {"dropped_a", dropped_a},
        {"dropped_b", dropped_b},
        {"validation_accuracy", evaluation::split_accuracy(two_stream_logits(result.a, result.b), *val)},
        {"validation_accuracy_blank_b",
         evaluation::split_accuracy(two_stream_logits(result.a, result.b, true), *val)}});
  }
  return result;
}

// --- cross-modal autoencoder ------------------------------------------------------------

CrossModalAutoencoderImpl::CrossModalAutoencoderImpl(models::StreamEncoderImpl& encoder, int decoder_blocks)
    : frames_(encoder.config().frames) {
  if (decoder_blocks < 1) throw ConfigError("autoencoder needs at least one decoder block");
  encoder_ = register_module("encoder", models::clone_encoder(encoder));
  for (auto& p : encoder_->head_parameters()) p.set_requires_grad(false);
  const auto widths = encoder.config().stage_widths();
  int in = encoder.config().final_map_width();
  for (int k = 0; k < decoder_blocks; ++k) {
    const int idx = std::max<int>(0, static_cast<int>(widths.size()) - 1 - k);
    const int out = widths[idx];
    deconv_.push_back(register_module("deconv" + std::to_string(k + 1),
                                      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1))));
    norm_.push_back(register_module("norm" + std::to_string(k + 1), nn::BatchNorm2d(out)));
    in = out;
  }
  output_ = register_module("output", nn::Conv2d(nn::Conv2dOptions(in, 3, 3).padding(1)));
}

torch::Tensor CrossModalAutoencoderImpl::forward(const torch::Tensor& clips) {
  const auto b = clips.size(0), t = clips.size(1), h = clips.size(2), w = clips.size(3);
  auto frames = clips.permute({0, 1, 4, 2, 3}).reshape({b * t, 3, h, w});
  auto x = encoder_->backbone(frames, t);
  for (std::size_t k = 0; k < deconv_.size(); ++k) x = torch::relu(norm_[k]->forward(deconv_[k]->forward(x)));
  if (x.size(2) != h || x.size(3) != w) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{h, w})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  x = torch::sigmoid(output_->forward(x));
  return x.view({b, t, 3, h, w}).permute({0, 1, 3, 4, 2}).contiguous();
}

double reconstruction_error(CrossModalAutoencoderImpl& autoencoder, const data::Split& split,
                            std::int64_t batch_size) {
  torch::NoGradGuard no_grad;
  const bool was_training = autoencoder.is_training();
  autoencoder.eval();
  double total = 0.0;
  for (std::int64_t begin = 0; begin < split.size(); begin += batch_size) {
    auto batch = split.slice(begin, std::min(split.size(), begin + batch_size));
    total += F::mse_loss(autoencoder.forward(batch.modality_a), batch.modality_b,
                         F::MSELossFuncOptions().reduction(torch::kSum))
                 .item<double>();
  }
  autoencoder.train(was_training);
  const auto elements = split.modality_b.numel();
  return elements > 0 ? total / static_cast<double>(elements) : 0.0;
}

evaluation::LogitFn autoencoder_logits(CrossModalAutoencoder autoencoder, models::StreamEncoder b_stream) {
  return [autoencoder, b_stream](const data::ClipBatch& batch) mutable {
    autoencoder->eval();
    return b_stream->forward(autoencoder->forward(batch.modality_a)).logits;
  };
}

AutoencoderResult train_autoencoder_baseline(const data::Dataset& dataset, models::StreamEncoder a_stream,
                                             models::StreamEncoder b_stream, const AutoencoderConfig& config) {
  AutoencoderResult result;
  torch::manual_seed(config.init_seed);
  result.autoencoder = CrossModalAutoencoder(*a_stream, config.decoder_blocks);
  auto& ae = result.autoencoder;
  auto optimizer = training::make_optimizer(ae->parameters(), config.optimizer);
  std::mt19937_64 order(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    ae->train();
    double sum = 0.0;
    std::int64_t elements = 0;
    for (const auto& indices : data::make_batches(dataset.train.size(), config.batch_size, &order)) {
      auto batch = dataset.train.gather(indices);
      optimizer->zero_grad();
      auto loss = F::mse_loss(ae->forward(batch.modality_a), batch.modality_b);
      if (!std::isfinite(loss.item<double>())) throw TrainingError("autoencoder reconstruction loss became non-finite");
      loss.backward();
      optimizer->step();
      sum += loss.item<double>() * static_cast<double>(batch.modality_b.numel());
      elements += batch.modality_b.numel();
    }
    result.log.push_back(json{{"stage", "autoencoder"},
                              {"epoch", epoch},
                              {"train_loss", sum / static_cast<double>(std::max<std::int64_t>(1, elements))},
                              {"test_reconstruction_error", reconstruction_error(*ae, dataset.test)}});
  }
  ae->eval();
  result.train_reconstruction_error = reconstruction_error(*ae, dataset.train);
  result.test_reconstruction_error = reconstruction_error(*ae, dataset.test);
  auto downstream = autoencoder_logits(ae, b_stream);
  auto a_scores = evaluation::stream_logits(a_stream, data::Modality::A);
  result.downstream_accuracy = evaluation::split_accuracy(downstream, dataset.test);
  result.fused_accuracy = evaluation::split_accuracy(
      [downstream, a_scores](const data::ClipBatch& b) { return training::fuse_logits(a_scores(b), downstream(b)); },
      dataset.test);
  return result;
}

// --- naive binary GAN -------------------------------------------------------------------

training::Step2Result train_naive_binary_gan(models::StreamEncoder teacher, const data::Dataset& dataset,
                                             training::AdversarialConfig config,
                                             std::optional<models::StreamEncoder> a_stream) {
  config.task = training::DiscriminatorTask::Binary;
  return training::train_step2(std::move(teacher), dataset, config, std::move(a_stream));
}

namespace {

torch::Tensor frame_features(models::StreamEncoderImpl& enc, const torch::Tensor& clips) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> chunks;
  for (std::int64_t begin = 0; begin < clips.size(0); begin += 64) {
    auto f = enc.features(clips.slice(0, begin, std::min(clips.size(0), begin + 64)));
    chunks.push_back(f.reshape({-1, f.size(2)}));
  }
  return torch::cat(chunks, 0);
}

}  // namespace

double feature_probe_accuracy(models::StreamEncoderImpl& hallucination, models::StreamEncoderImpl& teacher,
                              const data::Dataset& dataset, std::uint64_t seed, int epochs) {
  auto make = [&](const data::Split& s) {
    auto fake = frame_features(hallucination, s.modality_a);
    auto real = frame_features(teacher, s.modality_b);
    auto x = torch::cat({fake, real}, 0);
    auto y = torch::cat({torch::ones({fake.size(0)}), torch::zeros({real.size(0)})});
    return std::make_pair(x, y);
  };
  auto [xtr, ytr] = make(dataset.train);
  auto [xte, yte] = make(dataset.test.size() > 0 ? dataset.test : dataset.validation);
  auto mean = xtr.mean(0, true);
  auto sd = xtr.std(0, true, true).clamp_min(1e-6);
  xtr = (xtr - mean) / sd;
  xte = (xte - mean) / sd;

  torch::manual_seed(seed);
  nn::Linear probe(xtr.size(1), 1);
  torch::optim::Adam opt(probe->parameters(), torch::optim::AdamOptions(1e-2));
  for (int e = 0; e < epochs; ++e) {
    opt.zero_grad();
    auto loss = F::binary_cross_entropy_with_logits(probe->forward(xtr).squeeze(1), ytr);
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard no_grad;
  auto pred = probe->forward(xte).squeeze(1).gt(0).to(torch::kFloat32);
  return pred.eq(yte).to(torch::kFloat64).mean().item<double>();
}

// --- Euclidean hallucination ------------------------------------------------------------

double mean_feature_distance(models::StreamEncoderImpl& hallucination, models::StreamEncoderImpl& teacher,
                             const data::Split& split, std::int64_t batch_size) {
  torch::NoGradGuard no_grad;
  double total = 0.0;
  std::int64_t elements = 0;
  for (std::int64_t begin = 0; begin < split.size(); begin += batch_size) {
    auto batch = split.slice(begin, std::min(split.size(), begin + batch_size));
    auto d = hallucination.features(batch.modality_a) - teacher.features(batch.modality_b);
    total += d.pow(2).sum().item<double>();
    elements += d.numel();
  }
  return elements > 0 ? total / static_cast<double>(elements) : 0.0;
}

EuclideanResult train_euclidean_hallucination(models::StreamEncoder teacher, const data::Dataset& dataset,
                                              const EuclideanConfig& config,
                                              std::optional<models::StreamEncoder> a_stream) {
  if (config.feature_weight < 0.0 || config.class_weight < 0.0) {
    throw ConfigError("euclidean loss weights must be nonnegative");
  }
  EuclideanResult result;
  teacher->eval();
  for (auto& p : teacher->parameters()) p.set_requires_grad(false);
  auto h = training::init_hallucination_from_teacher(*teacher);
  auto best = models::clone_encoder(*h);
  auto optimizer = training::make_optimizer(h->trunk_parameters(), config.optimizer);

  const auto& val = dataset.validation.size() > 0 ? dataset.validation : dataset.train;
  auto h_scorer = evaluation::stream_logits(h, data::Modality::A);
  evaluation::LogitFn selector = h_scorer;
  if (a_stream) {
    auto a_scorer = evaluation::stream_logits(*a_stream, data::Modality::A);
    selector = [a_scorer, h_scorer](const data::ClipBatch& b) { return training::fuse_logits(a_scorer(b), h_scorer(b)); };
  }
  result.initial_distance = mean_feature_distance(*h, *teacher, val);
  auto validate = [&](std::int64_t step, double loss) {
    const double h_acc = evaluation::split_accuracy(h_scorer, val);
    const double sel = a_stream ? evaluation::split_accuracy(selector, val) : h_acc;
    json rec{{"stage", "euclidean"},
             {"step", step},
             {"loss", loss},
             {"hallucination_accuracy", h_acc},
             {"feature_distance", mean_feature_distance(*h, *teacher, val)}};
    if (a_stream) rec["fused_accuracy"] = sel;
    result.log.push_back(rec);
    if (step == 0 || sel > result.best_validation_accuracy) {
      result.best_validation_accuracy = sel;
      result.best_step = step;
      models::copy_state(*h, *best);
    }
  };

  validate(0, 0.0);
  std::mt19937_64 order(config.seed);
  const auto per_epoch = (dataset.train.size() + config.batch_size - 1) / std::max(1, config.batch_size);
  const auto every = config.eval_every > 0 ? config.eval_every : per_epoch;
  double window_loss = 0.0;
  int window = 0;
  std::int64_t step = 0;
  while (step < config.steps) {
    for (const auto& indices : data::make_batches(dataset.train.size(), config.batch_size, &order)) {
      if (step >= config.steps) break;
      auto batch = dataset.train.gather(indices);
      torch::Tensor target;
      {
        torch::NoGradGuard no_grad;
        target = teacher->features(batch.modality_b);
      }
      optimizer->zero_grad();
      auto f = h->features(batch.modality_a);
      auto distance = (f - target).pow(2).mean();
      auto loss = config.feature_weight * distance;
      if (config.class_weight > 0.0) {
        loss = loss + config.class_weight *
                          training::checked_cross_entropy(h->classify(f), batch.class_label, "euclidean cross-entropy");
      }
      if (!std::isfinite(loss.item<double>())) throw TrainingError("euclidean hallucination loss became non-finite");
      loss.backward();
      optimizer->step();
      window_loss += loss.item<double>();
      ++window;
      ++step;
      if (step % every == 0 || step == config.steps) {
        validate(step, window_loss / window);
        window_loss = 0.0;
        window = 0;
      }
    }
  }
  result.final_distance = mean_feature_distance(*h, *teacher, val);
  result.hallucination = best;
  for (auto& p : result.hallucination->head_parameters()) p.set_requires_grad(false);
  return result;
}

}  // namespace admd::baselines
