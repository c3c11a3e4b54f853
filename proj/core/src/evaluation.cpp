#include "admd/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"

namespace admd::evaluation {
using json = nlohmann::json;

// --- evaluate -------------------------------------------------------------------------

std::vector<double> per_class_accuracy(const torch::Tensor& logits, const torch::Tensor& labels, int num_classes) {
  std::vector<double> out(static_cast<std::size_t>(num_classes), 0.0);
  auto pred = logits.argmax(1);
  for (int c = 0; c < num_classes; ++c) {
    auto mask = labels.eq(c);
    const auto n = mask.sum().item<std::int64_t>();
    if (n > 0) out[c] = pred.masked_select(mask).eq(c).to(torch::kFloat64).mean().item<double>();
  }
  return out;
}

EvalReport evaluate(const std::vector<std::pair<std::string, LogitFn>>& models, const data::Split& split,
                    Fusion fusion, int num_classes) {
  if (models.empty()) throw ConfigError("evaluate needs at least one model");
  if (split.size() > 0) {
    const auto lo = split.class_label.min().item<std::int64_t>();
    const auto hi = split.class_label.max().item<std::int64_t>();
    if (lo < 0 || hi >= num_classes) {
      throw DataError("split labels span [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] but the models have " + std::to_string(num_classes) + " classes");
    }
  }
  EvalReport report;
  torch::Tensor sum;
  for (const auto& [name, model] : models) {
    auto logits = predict(model, split);
    if (split.size() > 0 && logits.size(1) != num_classes) {
      throw DataError("model '" + name + "' emits " + std::to_string(logits.size(1)) + " classes, expected " +
                      std::to_string(num_classes));
    }
    report.accuracy[name] = accuracy(logits, split.class_label);
    report.per_class[name] = per_class_accuracy(logits, split.class_label, num_classes);
    sum = sum.defined() ? sum + logits : logits.clone();
  }
  if (fusion == Fusion::AverageLogits) {
    auto fused = sum / static_cast<double>(models.size());
    report.fused_accuracy = accuracy(fused, split.class_label);
    report.fused_per_class = per_class_accuracy(fused, split.class_label, num_classes);
  }
  return report;
}

json EvalReport::to_json() const {
  json j{{"accuracy", accuracy}, {"per_class", per_class}, {"config_hash", config_hash}, {"seed", seed},
         {"timestamp", timestamp}};
  if (fused_accuracy) {
    j["fused_accuracy"] = *fused_accuracy;
    j["fused_per_class"] = fused_per_class;
  }
  if (fake_probability) j["fake_probability"] = *fake_probability;
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.accuracy = j.at("accuracy").get<std::map<std::string, double>>();
  r.per_class = j.at("per_class").get<std::map<std::string, std::vector<double>>>();
  r.config_hash = j.value("config_hash", "");
  r.seed = j.value("seed", std::uint64_t{0});
  r.timestamp = j.value("timestamp", "");
  if (j.contains("fused_accuracy")) {
    r.fused_accuracy = j.at("fused_accuracy").get<double>();
    r.fused_per_class = j.value("fused_per_class", std::vector<double>{});
  }
  if (j.contains("fake_probability")) r.fake_probability = j.at("fake_probability").get<double>();
  return r;
}

// --- noise sweep ----------------------------------------------------------------------

namespace {

json point_json(const SweepPoint& p) {
  return json{{"variance", p.variance},
              {"blank", p.blank},
              {"two_stream_accuracy", p.two_stream_accuracy},
              {"admd_fused_accuracy", p.admd_fused_accuracy},
              {"fake_probability", p.fake_probability}};
}

SweepPoint point_from_json(const json& j) {
  SweepPoint p;
  p.variance = j.at("variance").get<double>();
  p.blank = j.value("blank", false);
  p.two_stream_accuracy = j.at("two_stream_accuracy").get<double>();
  p.admd_fused_accuracy = j.at("admd_fused_accuracy").get<double>();
  p.fake_probability = j.at("fake_probability").get<double>();
  return p;
}

torch::Tensor batched_features(models::StreamEncoderImpl& enc, const torch::Tensor& clips) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> chunks;
  for (std::int64_t begin = 0; begin < clips.size(0); begin += 64) {
    chunks.push_back(enc.features(clips.slice(0, begin, std::min(clips.size(0), begin + 64))));
  }
  return torch::cat(chunks, 0);
}

}  // namespace

json SweepResult::to_json() const {
  json pts = json::array();
  for (const auto& p : points) pts.push_back(point_json(p));
  json j{{"points", pts}};
  j["blank"] = blank ? point_json(*blank) : json(nullptr);
  j["switch_point"] = switch_point ? json(*switch_point) : json(nullptr);
  return j;
}

SweepResult SweepResult::from_json(const json& j) {
  SweepResult r;
  for (const auto& p : j.at("points")) r.points.push_back(point_from_json(p));
  if (j.contains("blank") && !j["blank"].is_null()) r.blank = point_from_json(j["blank"]);
  if (j.contains("switch_point") && !j["switch_point"].is_null()) r.switch_point = j["switch_point"].get<double>();
  return r;
}

SweepResult noise_sweep(const SweepModels& m, const data::Split& split, const SweepOptions& options) {
  if (options.variances.empty()) throw ConfigError("noise sweep needs at least one variance");
  if (options.variances.front() != 0.0) throw ConfigError("noise sweep grid must start at variance 0");
  for (std::size_t i = 1; i < options.variances.size(); ++i) {
    if (!(options.variances[i] > options.variances[i - 1])) {
      throw ConfigError("noise sweep variances must be strictly increasing");
    }
  }
  const bool conditioned = m.discriminator->config().conditioning_dim > 0;
  auto a_scores = stream_logits(m.a, data::Modality::A);
  auto h_scores = stream_logits(m.hallucination, data::Modality::A);
  const double admd = split_accuracy(
      [a_scores, h_scores](const data::ClipBatch& b) { return training::fuse_logits(a_scores(b), h_scores(b)); },
      split);
  auto b_scores = stream_logits(m.b, data::Modality::B);
  auto two_stream = [a_scores, b_scores](const data::ClipBatch& b) {
    return training::fuse_logits(a_scores(b), b_scores(b));
  };

  auto teacher = m.b;
  auto disc = m.discriminator;
  auto score = [&](const torch::Tensor& corrupted_b, double variance, bool blank) {
    data::Split noisy = split;
    noisy.modality_b = corrupted_b;
    SweepPoint p;
    p.variance = variance;
    p.blank = blank;
    p.two_stream_accuracy = split_accuracy(two_stream, noisy);
    p.admd_fused_accuracy = admd;
    p.fake_probability =
        training::mean_fake_probability(*disc, batched_features(*teacher, corrupted_b), conditioned);
    return p;
  };

  SweepResult result;
  for (double v : options.variances) {
    result.points.push_back(score(data::speckle_noise(split.modality_b, {v, options.noise_seed}), v, false));
  }
  if (options.include_blank) result.blank = score(torch::zeros_like(split.modality_b), 0.0, true);
  result.switch_point = detect_switch_point(result, options.threshold, options.margin);
  return result;
}

std::optional<double> detect_switch_point(const SweepResult& sweep, double threshold, double margin) {
  for (const auto& p : sweep.points) {
    if (p.fake_probability > threshold + margin) return p.variance;
  }
  return std::nullopt;
}

std::optional<double> first_accuracy_drop(const SweepResult& sweep, double drop) {
  if (sweep.points.empty()) return std::nullopt;
  const double clean = sweep.points.front().two_stream_accuracy;
  for (const auto& p : sweep.points) {
    if (p.two_stream_accuracy < clean - drop) return p.variance;
  }
  return std::nullopt;
}

// --- ablations ------------------------------------------------------------------------

std::string to_string(AblationSuite suite) {
  switch (suite) {
    case AblationSuite::BottleneckSize: return "bottleneck-size";
    case AblationSuite::BottleneckVariant: return "bottleneck-variant";
    case AblationSuite::DiscriminatorTask: return "discriminator-task";
  }
  return "?";
}

AblationSuite ablation_suite_from_string(const std::string& name) {
  if (name == "bottleneck-size") return AblationSuite::BottleneckSize;
  if (name == "bottleneck-variant") return AblationSuite::BottleneckVariant;
  if (name == "discriminator-task") return AblationSuite::DiscriminatorTask;
  throw ConfigError("unknown ablation suite '" + name +
                    "' (expected bottleneck-size, bottleneck-variant or discriminator-task)");
}

std::vector<AblationArm> ablation_arms(AblationSuite suite, const models::EncoderConfig& encoder,
                                       const training::AdversarialConfig& adversarial) {
  using models::BottleneckVariant;
  std::vector<AblationArm> arms;
  auto arm = [&](std::string name) {
    arms.push_back({std::move(name), encoder, adversarial});
    return &arms.back();
  };
  switch (suite) {
    case AblationSuite::BottleneckSize: {
      auto* small = arm("d=" + std::to_string(encoder.bottleneck_dim));
      small->encoder.bottleneck = BottleneckVariant::PoolConv;
      auto* wide = arm("d=" + std::to_string(encoder.feature_width > 0 ? encoder.feature_width
                                                                       : encoder.final_map_width()));
      wide->encoder.bottleneck = BottleneckVariant::None;
      break;
    }
    case AblationSuite::BottleneckVariant:
      for (auto v : {BottleneckVariant::None, BottleneckVariant::OneConv, BottleneckVariant::SpatialConvThen1d,
                     BottleneckVariant::PoolConv}) {
        arm(models::to_string(v))->encoder.bottleneck = v;
      }
      break;
    case AblationSuite::DiscriminatorTask: {
      auto* binary = arm("binary");
      binary->adversarial.task = training::DiscriminatorTask::Binary;
      binary->adversarial.frame_conditioning = false;
      auto* cls = arm("class");
      cls->adversarial.task = training::DiscriminatorTask::Extended;
      cls->adversarial.frame_conditioning = false;
      auto* framed = arm("class+frame");
      framed->adversarial.task = training::DiscriminatorTask::Extended;
      framed->adversarial.frame_conditioning = true;
      break;
    }
  }
  return arms;
}

json AblationRow::to_json() const {
  return json{{"arm", arm},
              {"teacher_accuracy", teacher_accuracy},
              {"hallucination_accuracy", hallucination_accuracy},
              {"fused_accuracy", fused_accuracy},
              {"fake_probability", fake_probability}};
}

json AblationTable::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) rs.push_back(r.to_json());
  return json{{"suite", to_string(suite)}, {"rows", rs}};
}

AblationTable run_ablation(AblationSuite suite, const data::Dataset& dataset, const models::EncoderConfig& encoder,
                           const training::AdversarialConfig& adversarial, const TeacherProvider& teacher_for,
                           std::optional<models::StreamEncoder> a_stream, const Step2Cache& cached) {
  AblationTable table;
  table.suite = suite;
  for (const auto& arm : ablation_arms(suite, encoder, adversarial)) {
    auto teacher = teacher_for(arm.encoder);
    if (!(teacher->config() == arm.encoder)) {
      throw CheckpointError("teacher for ablation arm '" + arm.name + "' has a different architecture");
    }
    std::optional<training::Step2Result> hit;
    if (cached) hit = cached(arm);
    auto result = hit ? *hit : training::train_step2(teacher, dataset, arm.adversarial, a_stream);
    AblationRow row;
    row.arm = arm.name;
    row.teacher_accuracy = split_accuracy(stream_logits(teacher, data::Modality::B), dataset.test);
    auto h = stream_logits(result.hallucination, data::Modality::A);
    row.hallucination_accuracy = split_accuracy(h, dataset.test);
    if (a_stream) {
      auto a = stream_logits(*a_stream, data::Modality::A);
      row.fused_accuracy =
          split_accuracy([a, h](const data::ClipBatch& b) { return training::fuse_logits(a(b), h(b)); }, dataset.test);
    }
    row.fake_probability =
        training::mean_fake_probability(*result.discriminator,
                                        batched_features(*result.hallucination, dataset.test.modality_a),
                                        result.discriminator->config().conditioning_dim > 0);
    table.rows.push_back(row);
  }
  return table;
}

// --- gradient checks ------------------------------------------------------------------

double gradcheck(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& params, double h,
                 double floor) {
  for (auto& p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  auto value = loss();
  if (!std::isfinite(value.item<double>())) throw TrainingError("gradcheck: loss is not finite");
  auto analytic = torch::autograd::grad({value}, params, {}, false, false, true);

  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto flat = params[i].view(-1);
    auto g = analytic[i].defined() ? analytic[i].reshape(-1).to(torch::kFloat64)
                                   : torch::zeros({flat.numel()}, torch::kFloat64);
    auto ga = g.accessor<double, 1>();
    for (std::int64_t k = 0; k < flat.numel(); ++k) {
      const double orig = flat[k].item<double>();
      auto at = [&](double offset) {
        flat[k] = orig + offset;
        return loss().item<double>();
      };
      // fourth-order central stencil
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      flat[k] = orig;
      if (!std::isfinite(numeric)) throw TrainingError("gradcheck: finite difference is not finite");
      const double err = std::abs(ga[k] - numeric) / std::max({std::abs(ga[k]), std::abs(numeric), floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

GradcheckReport gradcheck_losses(const ToySizes& sizes) {
  models::EncoderConfig ec;
  ec.num_classes = sizes.num_classes;
  ec.frames = sizes.frames;
  ec.image_size = sizes.image_size;
  ec.widths = {sizes.width, sizes.width, sizes.width};
  ec.width_multiplier = 1.0;
  ec.units_per_stage = 2;
  ec.feature_width = 0;
  ec.bottleneck = models::BottleneckVariant::FcAfterPool;
  ec.bottleneck_dim = sizes.bottleneck_dim;

  auto teacher = models::build_encoder(ec, sizes.seed);
  auto hallucination = models::build_encoder(ec, sizes.seed + 1);
  teacher->to(torch::kFloat64);
  hallucination->to(torch::kFloat64);
  // Move temporal kernels off the identity so time mixing is exercised.
  {
    torch::NoGradGuard no_grad;
    auto gen = make_torch_generator(sizes.seed + 2);
    for (auto& layer : hallucination->temporal_layers()) {
      layer->weight.add_(torch::randn(layer->weight.sizes(), gen, torch::kFloat64) * 0.1);
    }
  }

  models::DiscriminatorConfig dc;
  dc.feature_dim = sizes.bottleneck_dim;
  dc.conditioning_dim = sizes.frames > 1 ? sizes.frames : 0;
  dc.num_outputs = sizes.num_classes + 1;
  dc.width_scale = 8.0 / 2048.0;
  auto disc = models::build_discriminator(dc, sizes.seed + 3);
  disc->to(torch::kFloat64);

  auto gen = make_torch_generator(sizes.seed + 4);
  data::ClipBatch batch;
  const std::vector<std::int64_t> shape = {sizes.batch, sizes.frames, sizes.image_size, sizes.image_size, 3};
  batch.modality_a = torch::rand(shape, gen, torch::kFloat64);
  batch.modality_b = torch::rand(shape, gen, torch::kFloat64);
  batch.class_label = torch::arange(sizes.batch, torch::kInt64).remainder(sizes.num_classes);
  batch.frame_index_onehot = data::frame_onehot(sizes.batch, sizes.frames).to(torch::kFloat64);
  const bool conditioned = dc.conditioning_dim > 0;

  GradcheckReport report;
  for (auto& p : hallucination->parameters()) report.encoder_parameters += p.numel();
  for (auto& p : disc->parameters()) report.discriminator_parameters += p.numel();

  report.step1 = gradcheck(
      [&] {
        return training::checked_cross_entropy(hallucination->forward(batch.modality_a).logits, batch.class_label,
                                               "step-1 loss");
      },
      hallucination->parameters());

  torch::Tensor fake_const, real_in;
  std::optional<torch::Tensor> onehot;
  {
    torch::NoGradGuard no_grad;
    auto [f, oh] = training::discriminator_inputs(hallucination->features(batch.modality_a), batch, conditioned);
    fake_const = f;
    onehot = oh;
    real_in = training::discriminator_inputs(teacher->features(batch.modality_b), batch, conditioned).first;
  }
  report.discriminator = gradcheck(
      [&] {
        auto t = training::discriminator_terms(*disc, fake_const, real_in, onehot, batch.class_label);
        return t.fake_term + t.real_term;
      },
      disc->parameters());

  report.generator = gradcheck(
      [&] {
        auto f = training::discriminator_inputs(hallucination->features(batch.modality_a), batch, conditioned).first;
        return training::generator_loss(*disc, f, onehot, batch.class_label, training::GeneratorObjective::LabelFlip);
      },
      hallucination->trunk_parameters());
  return report;
}

}  // namespace admd::evaluation
