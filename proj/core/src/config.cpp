#include "admd/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"
#include "admd/tensor_io.hpp"

namespace admd::config {
using json = nlohmann::json;

double ModelSection::discriminator_width_scale() const {
  return discriminator_widths == "literal" ? 1.0 : 0.25 * width_multiplier;
}

models::EncoderConfig ExperimentConfig::encoder(int num_classes, int frames, int image_size) const {
  models::EncoderConfig e;
  e.num_classes = num_classes;
  e.frames = frames;
  e.image_size = image_size;
  e.widths = model.widths;
  e.width_multiplier = model.width_multiplier;
  e.units_per_stage = model.units_per_stage;
  e.feature_width = model.feature_width;
  e.bottleneck = model.bottleneck;
  e.bottleneck_dim = model.bottleneck_dim;
  return e;
}

training::Step1Config ExperimentConfig::step1_config(std::uint64_t seed) const {
  training::Step1Config c;
  c.optimizer = step1.optimizer;
  c.epochs = step1.epochs;
  c.batch_size = step1.batch_size;
  c.seed = seed;
  c.config_hash = config_hash(*this);
  return c;
}

training::AdversarialConfig ExperimentConfig::adversarial_config(std::uint64_t seed) const {
  training::AdversarialConfig c;
  c.generator = step2.generator;
  c.discriminator = step2.discriminator;
  c.task = step2.task;
  c.frame_conditioning = step2.frame_conditioning;
  c.objective = step2.objective;
  c.discriminator_updates_per_step = step2.discriminator_updates_per_step;
  c.variant = model.discriminator;
  c.discriminator_width_scale = model.discriminator_width_scale();
  c.steps = step2.steps;
  c.batch_size = step2.batch_size;
  c.eval_every = step2.eval_every;
  c.seed = seed;
  return c;
}

// --- validation -----------------------------------------------------------------------

void ExperimentConfig::validate() const {
  std::vector<std::string> p;
  if (version != kConfigVersion) p.push_back("unsupported config version " + std::to_string(version));
  if (seeds.empty()) p.emplace_back("at least one seed is required");
  if (dataset.source != "synthetic" && dataset.source != "directory") {
    p.push_back("dataset source must be synthetic or directory, got '" + dataset.source + "'");
  }
  if (dataset.source == "directory" && dataset.directory.empty()) {
    p.emplace_back("dataset directory is required when source is directory");
  }
  try {
    dataset.synthetic.validate();
  } catch (const ConfigError& e) {
    for (const auto& s : e.problems()) p.push_back("dataset: " + s);
  }
  if (model.widths.empty()) p.emplace_back("backbone needs at least one stage width");
  for (int w : model.widths) {
    if (w < 1) p.emplace_back("backbone widths must be positive");
  }
  if (!(model.width_multiplier > 0.0)) p.emplace_back("width multiplier must be positive");
  if (model.units_per_stage < 2) p.emplace_back("each stage needs at least two residual units");
  if (model.feature_width < 0) p.emplace_back("feature width must be nonnegative");
  if (model.bottleneck_dim < 1) p.emplace_back("bottleneck dimension must be positive");
  if (model.discriminator_widths != "scaled" && model.discriminator_widths != "literal") {
    p.push_back("discriminator widths must be scaled or literal, got '" + model.discriminator_widths + "'");
  }
  auto check_opt = [&](const training::OptimizerConfig& o, const std::string& where) {
    if (o.kind != "adam" && o.kind != "rmsprop" && o.kind != "sgd") {
      p.push_back(where + ": unknown optimizer '" + o.kind + "'");
    }
    if (!(o.learning_rate > 0.0)) p.push_back(where + ": learning rate must be positive");
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0)) p.push_back(where + ": beta1 must lie in [0, 1)");
    if (!(o.beta2 >= 0.0 && o.beta2 < 1.0)) p.push_back(where + ": beta2 must lie in [0, 1)");
    if (!(o.weight_decay >= 0.0)) p.push_back(where + ": weight decay must be nonnegative");
  };
  check_opt(step1.optimizer, "step1");
  check_opt(step2.generator, "step2 generator");
  check_opt(step2.discriminator, "step2 discriminator");
  check_opt(baselines.moddrop_optimizer, "moddrop");
  check_opt(baselines.autoencoder_optimizer, "autoencoder");
  if (step1.epochs < 0) p.emplace_back("step1 epochs must be nonnegative");
  if (step1.batch_size < 1) p.emplace_back("step1 batch size must be positive");
  if (step2.steps < 0) p.emplace_back("step2 steps must be nonnegative");
  if (step2.batch_size < 1) p.emplace_back("step2 batch size must be positive");
  if (step2.discriminator_updates_per_step < 1) p.emplace_back("discriminator updates per step must be positive");
  if (step2.eval_every < 0) p.emplace_back("step2 eval_every must be nonnegative");
  if (!(baselines.moddrop_drop_a >= 0.0 && baselines.moddrop_drop_a < 1.0) ||
      !(baselines.moddrop_drop_b >= 0.0 && baselines.moddrop_drop_b < 1.0)) {
    p.emplace_back("moddrop drop probability must lie in [0, 1)");
  }
  if (!(baselines.moddrop_image_dropout_rate >= 0.0 && baselines.moddrop_image_dropout_rate < 1.0)) {
    p.emplace_back("moddrop image dropout rate must lie in [0, 1)");
  }
  if (baselines.moddrop_epochs < 0 || baselines.autoencoder_epochs < 0) p.emplace_back("baseline epochs must be nonnegative");
  if (baselines.autoencoder_decoder_blocks < 1) p.emplace_back("autoencoder needs at least one decoder block");
  if (baselines.euclidean_feature_weight < 0.0 || baselines.euclidean_class_weight < 0.0) {
    p.emplace_back("euclidean loss weights must be nonnegative");
  }
  for (double w : baselines.euclidean_sweep) {
    if (!(w >= 0.0)) p.emplace_back("euclidean sweep weights must be nonnegative");
  }
  if (evaluation.sweep.empty() || evaluation.sweep.front() != 0.0) p.emplace_back("noise sweep must start at variance 0");
  for (std::size_t i = 1; i < evaluation.sweep.size(); ++i) {
    if (!(evaluation.sweep[i] > evaluation.sweep[i - 1])) {
      p.emplace_back("noise sweep variances must be strictly increasing");
      break;
    }
  }
  if (!(evaluation.threshold >= 0.0 && evaluation.threshold <= 1.0)) p.emplace_back("switch threshold must lie in [0, 1]");
  if (!(evaluation.margin >= 0.0)) p.emplace_back("switch margin must be nonnegative");
  if (!p.empty()) throw ConfigError(std::move(p));
}

// --- parsing --------------------------------------------------------------------------

namespace {

class Reader {
 public:
  std::vector<std::string> problems;

  /// Checks `node` is a map and reports keys outside `known`.
  bool section(const YAML::Node& node, const std::string& name, std::initializer_list<const char*> known) {
    if (!node) return false;
    if (!node.IsMap()) {
      problems.push_back("section '" + name + "' must be a mapping");
      return false;
    }
    std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) problems.push_back("unknown key '" + key + "' in section '" + name + "'");
    }
    return true;
  }

  template <typename T>
  void get(const YAML::Node& node, const char* key, const std::string& where, T& out) {
    if (!node || !node[key]) return;
    try {
      out = node[key].as<T>();
    } catch (const YAML::Exception&) {
      problems.push_back(where + "." + key + ": cannot read value '" + scalar(node[key]) + "'");
    }
  }

  template <typename T, typename Fn>
  void get_enum(const YAML::Node& node, const char* key, const std::string& where, T& out, Fn from_string) {
    std::string text;
    if (!node || !node[key]) return;
    get(node, key, where, text);
    try {
      out = from_string(text);
    } catch (const ConfigError& e) {
      problems.push_back(where + "." + key + ": " + e.what());
    }
  }

  void optimizer(const YAML::Node& node, const std::string& where, training::OptimizerConfig& o) {
    if (!section(node, where, {"kind", "learning_rate", "beta1", "beta2", "weight_decay"})) return;
    get(node, "kind", where, o.kind);
    get(node, "learning_rate", where, o.learning_rate);
    get(node, "beta1", where, o.beta1);
    get(node, "beta2", where, o.beta2);
    get(node, "weight_decay", where, o.weight_decay);
  }

  void synthetic(const YAML::Node& node, const std::string& where, data::SyntheticTaskSpec& s) {
    if (!section(node, where,
                 {"num_classes", "samples_per_class", "image_size", "frames_per_clip", "modality_a_informativeness",
                  "modality_b_informativeness", "overlap", "seed", "test_fraction", "validation_fraction",
                  "pixel_noise"})) {
      return;
    }
    get(node, "num_classes", where, s.num_classes);
    get(node, "samples_per_class", where, s.samples_per_class);
    get(node, "image_size", where, s.image_size);
    get(node, "frames_per_clip", where, s.frames_per_clip);
    get(node, "modality_a_informativeness", where, s.modality_a_informativeness);
    get(node, "modality_b_informativeness", where, s.modality_b_informativeness);
    get(node, "overlap", where, s.overlap);
    get(node, "seed", where, s.seed);
    get(node, "test_fraction", where, s.test_fraction);
    get(node, "validation_fraction", where, s.validation_fraction);
    get(node, "pixel_noise", where, s.pixel_noise);
  }

 private:
  static std::string scalar(const YAML::Node& n) {
    if (n.IsScalar()) return n.Scalar();
    YAML::Emitter e;
    e << YAML::Flow << n;
    return e.c_str();
  }
};

YAML::Node load_yaml(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("malformed config: " + std::string(e.what()));
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  auto root = load_yaml(text);
  ExperimentConfig c;
  Reader r;
  if (root && !root.IsNull()) {
    if (!root.IsMap()) throw ConfigError("config must be a mapping at the top level");
    r.section(root, "top level",
              {"version", "seed", "seeds", "dataset", "model", "training", "baselines", "evaluation", "output_dir"});
    r.get(root, "version", "top level", c.version);
    if (root["seed"]) {
      std::uint64_t s = 0;
      r.get(root, "seed", "top level", s);
      c.seeds = {s};
    }
    r.get(root, "seeds", "top level", c.seeds);
    std::string out = c.output_dir.string();
    r.get(root, "output_dir", "top level", out);
    c.output_dir = out;

    if (auto d = root["dataset"]; r.section(d, "dataset", {"source", "directory", "synthetic"})) {
      r.get(d, "source", "dataset", c.dataset.source);
      std::string dir;
      r.get(d, "directory", "dataset", dir);
      c.dataset.directory = dir;
      r.synthetic(d["synthetic"], "dataset.synthetic", c.dataset.synthetic);
    }
    if (auto m = root["model"]; r.section(m, "model",
                                          {"widths", "width_multiplier", "units_per_stage", "feature_width",
                                           "bottleneck", "bottleneck_dim", "discriminator",
                                           "discriminator_widths"})) {
      r.get(m, "widths", "model", c.model.widths);
      r.get(m, "width_multiplier", "model", c.model.width_multiplier);
      r.get(m, "units_per_stage", "model", c.model.units_per_stage);
      r.get(m, "feature_width", "model", c.model.feature_width);
      r.get_enum(m, "bottleneck", "model", c.model.bottleneck, models::bottleneck_from_string);
      r.get(m, "bottleneck_dim", "model", c.model.bottleneck_dim);
      r.get_enum(m, "discriminator", "model", c.model.discriminator, models::discriminator_from_string);
      r.get(m, "discriminator_widths", "model", c.model.discriminator_widths);
    }
    if (auto t = root["training"]; r.section(t, "training", {"step1", "step2"})) {
      if (auto s1 = t["step1"]; r.section(s1, "training.step1", {"optimizer", "epochs", "batch_size"})) {
        r.optimizer(s1["optimizer"], "training.step1.optimizer", c.step1.optimizer);
        r.get(s1, "epochs", "training.step1", c.step1.epochs);
        r.get(s1, "batch_size", "training.step1", c.step1.batch_size);
      }
      if (auto s2 = t["step2"]; r.section(s2, "training.step2",
                                          {"generator", "discriminator", "steps", "batch_size",
                                           "discriminator_updates_per_step", "objective", "task",
                                           "frame_conditioning", "eval_every"})) {
        r.optimizer(s2["generator"], "training.step2.generator", c.step2.generator);
        r.optimizer(s2["discriminator"], "training.step2.discriminator", c.step2.discriminator);
        r.get(s2, "steps", "training.step2", c.step2.steps);
        r.get(s2, "batch_size", "training.step2", c.step2.batch_size);
        r.get(s2, "discriminator_updates_per_step", "training.step2", c.step2.discriminator_updates_per_step);
        r.get_enum(s2, "objective", "training.step2", c.step2.objective, training::generator_objective_from_string);
        r.get_enum(s2, "task", "training.step2", c.step2.task, training::discriminator_task_from_string);
        r.get(s2, "frame_conditioning", "training.step2", c.step2.frame_conditioning);
        r.get(s2, "eval_every", "training.step2", c.step2.eval_every);
      }
    }
    if (auto b = root["baselines"]; r.section(b, "baselines", {"kinds", "moddrop", "autoencoder", "euclidean"})) {
      if (b["kinds"]) {
        std::vector<std::string> names;
        r.get(b, "kinds", "baselines", names);
        c.baselines.kinds.clear();
        for (const auto& n : names) {
          try {
            c.baselines.kinds.push_back(baselines::kind_from_string(n));
          } catch (const ConfigError& e) {
            r.problems.push_back(std::string("baselines.kinds: ") + e.what());
          }
        }
      }
      if (auto md = b["moddrop"]; r.section(md, "baselines.moddrop",
                                            {"drop_a", "drop_b", "image_dropout", "image_dropout_rate", "epochs",
                                             "optimizer"})) {
        r.get(md, "drop_a", "baselines.moddrop", c.baselines.moddrop_drop_a);
        r.get(md, "drop_b", "baselines.moddrop", c.baselines.moddrop_drop_b);
        r.get(md, "image_dropout", "baselines.moddrop", c.baselines.moddrop_image_dropout);
        r.get(md, "image_dropout_rate", "baselines.moddrop", c.baselines.moddrop_image_dropout_rate);
        r.get(md, "epochs", "baselines.moddrop", c.baselines.moddrop_epochs);
        r.optimizer(md["optimizer"], "baselines.moddrop.optimizer", c.baselines.moddrop_optimizer);
      }
      if (auto ae = b["autoencoder"];
          r.section(ae, "baselines.autoencoder", {"decoder_blocks", "epochs", "optimizer"})) {
        r.get(ae, "decoder_blocks", "baselines.autoencoder", c.baselines.autoencoder_decoder_blocks);
        r.get(ae, "epochs", "baselines.autoencoder", c.baselines.autoencoder_epochs);
        r.optimizer(ae["optimizer"], "baselines.autoencoder.optimizer", c.baselines.autoencoder_optimizer);
      }
      if (auto eu = b["euclidean"];
          r.section(eu, "baselines.euclidean", {"feature_weight", "class_weight", "sweep"})) {
        r.get(eu, "feature_weight", "baselines.euclidean", c.baselines.euclidean_feature_weight);
        r.get(eu, "class_weight", "baselines.euclidean", c.baselines.euclidean_class_weight);
        r.get(eu, "sweep", "baselines.euclidean", c.baselines.euclidean_sweep);
      }
    }
    if (auto e = root["evaluation"];
        r.section(e, "evaluation", {"sweep", "include_blank", "threshold", "margin", "ablations"})) {
      r.get(e, "sweep", "evaluation", c.evaluation.sweep);
      r.get(e, "include_blank", "evaluation", c.evaluation.include_blank);
      r.get(e, "threshold", "evaluation", c.evaluation.threshold);
      r.get(e, "margin", "evaluation", c.evaluation.margin);
      if (e["ablations"]) {
        std::vector<std::string> names;
        r.get(e, "ablations", "evaluation", names);
        c.evaluation.ablations.clear();
        for (const auto& n : names) {
          try {
            c.evaluation.ablations.push_back(evaluation::ablation_suite_from_string(n));
          } catch (const ConfigError& ex) {
            r.problems.push_back(std::string("evaluation.ablations: ") + ex.what());
          }
        }
      }
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    for (const auto& s : e.problems()) r.problems.push_back(s);
  }
  if (!r.problems.empty()) throw ConfigError(std::move(r.problems));
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) { return parse_config_text(read_text(path)); }

data::SyntheticTaskSpec parse_synthetic_spec(const std::filesystem::path& path) {
  auto node = load_yaml(read_text(path));
  data::SyntheticTaskSpec s;
  Reader r;
  if (node && !node.IsNull()) r.synthetic(node, "synthetic", s);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) r.problems.push_back(p);
  }
  if (!r.problems.empty()) throw ConfigError(std::move(r.problems));
  return s;
}

// --- serialization --------------------------------------------------------------------

namespace {

void emit_optimizer(YAML::Emitter& e, const char* key, const training::OptimizerConfig& o) {
  e << YAML::Key << key << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << o.kind;
  e << YAML::Key << "learning_rate" << YAML::Value << o.learning_rate;
  e << YAML::Key << "beta1" << YAML::Value << o.beta1;
  e << YAML::Key << "beta2" << YAML::Value << o.beta2;
  e << YAML::Key << "weight_decay" << YAML::Value << o.weight_decay;
  e << YAML::EndMap;
}

json optimizer_json(const training::OptimizerConfig& o) {
  return json{{"kind", o.kind},
              {"learning_rate", o.learning_rate},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"weight_decay", o.weight_decay}};
}

}  // namespace

std::string serialize(const ExperimentConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "version" << YAML::Value << c.version;
  e << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.seeds;
  e << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();

  const auto& s = c.dataset.synthetic;
  e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "source" << YAML::Value << c.dataset.source;
  e << YAML::Key << "directory" << YAML::Value << c.dataset.directory.string();
  e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_classes" << YAML::Value << s.num_classes;
  e << YAML::Key << "samples_per_class" << YAML::Value << s.samples_per_class;
  e << YAML::Key << "image_size" << YAML::Value << s.image_size;
  e << YAML::Key << "frames_per_clip" << YAML::Value << s.frames_per_clip;
  e << YAML::Key << "modality_a_informativeness" << YAML::Value << s.modality_a_informativeness;
  e << YAML::Key << "modality_b_informativeness" << YAML::Value << s.modality_b_informativeness;
  e << YAML::Key << "overlap" << YAML::Value << s.overlap;
  e << YAML::Key << "seed" << YAML::Value << s.seed;
  e << YAML::Key << "test_fraction" << YAML::Value << s.test_fraction;
  e << YAML::Key << "validation_fraction" << YAML::Value << s.validation_fraction;
  e << YAML::Key << "pixel_noise" << YAML::Value << s.pixel_noise;
  e << YAML::EndMap << YAML::EndMap;

  const auto& m = c.model;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "widths" << YAML::Value << YAML::Flow << m.widths;
  e << YAML::Key << "width_multiplier" << YAML::Value << m.width_multiplier;
  e << YAML::Key << "units_per_stage" << YAML::Value << m.units_per_stage;
  e << YAML::Key << "feature_width" << YAML::Value << m.feature_width;
  e << YAML::Key << "bottleneck" << YAML::Value << models::to_string(m.bottleneck);
  e << YAML::Key << "bottleneck_dim" << YAML::Value << m.bottleneck_dim;
  e << YAML::Key << "discriminator" << YAML::Value << models::to_string(m.discriminator);
  e << YAML::Key << "discriminator_widths" << YAML::Value << m.discriminator_widths;
  e << YAML::EndMap;

  e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "step1" << YAML::Value << YAML::BeginMap;
  emit_optimizer(e, "optimizer", c.step1.optimizer);
  e << YAML::Key << "epochs" << YAML::Value << c.step1.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << c.step1.batch_size;
  e << YAML::EndMap;
  e << YAML::Key << "step2" << YAML::Value << YAML::BeginMap;
  emit_optimizer(e, "generator", c.step2.generator);
  emit_optimizer(e, "discriminator", c.step2.discriminator);
  e << YAML::Key << "steps" << YAML::Value << c.step2.steps;
  e << YAML::Key << "batch_size" << YAML::Value << c.step2.batch_size;
  e << YAML::Key << "discriminator_updates_per_step" << YAML::Value << c.step2.discriminator_updates_per_step;
  e << YAML::Key << "objective" << YAML::Value << training::to_string(c.step2.objective);
  e << YAML::Key << "task" << YAML::Value << training::to_string(c.step2.task);
  e << YAML::Key << "frame_conditioning" << YAML::Value << c.step2.frame_conditioning;
  e << YAML::Key << "eval_every" << YAML::Value << c.step2.eval_every;
  e << YAML::EndMap << YAML::EndMap;

  const auto& b = c.baselines;
  e << YAML::Key << "baselines" << YAML::Value << YAML::BeginMap;
  std::vector<std::string> kinds;
  for (auto k : b.kinds) kinds.push_back(baselines::to_string(k));
  e << YAML::Key << "kinds" << YAML::Value << YAML::Flow << kinds;
  e << YAML::Key << "moddrop" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "drop_a" << YAML::Value << b.moddrop_drop_a;
  e << YAML::Key << "drop_b" << YAML::Value << b.moddrop_drop_b;
  e << YAML::Key << "image_dropout" << YAML::Value << b.moddrop_image_dropout;
  e << YAML::Key << "image_dropout_rate" << YAML::Value << b.moddrop_image_dropout_rate;
  e << YAML::Key << "epochs" << YAML::Value << b.moddrop_epochs;
  emit_optimizer(e, "optimizer", b.moddrop_optimizer);
  e << YAML::EndMap;
  e << YAML::Key << "autoencoder" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "decoder_blocks" << YAML::Value << b.autoencoder_decoder_blocks;
  e << YAML::Key << "epochs" << YAML::Value << b.autoencoder_epochs;
  emit_optimizer(e, "optimizer", b.autoencoder_optimizer);
  e << YAML::EndMap;
  e << YAML::Key << "euclidean" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "feature_weight" << YAML::Value << b.euclidean_feature_weight;
  e << YAML::Key << "class_weight" << YAML::Value << b.euclidean_class_weight;
  e << YAML::Key << "sweep" << YAML::Value << YAML::Flow << b.euclidean_sweep;
  e << YAML::EndMap << YAML::EndMap;

  const auto& ev = c.evaluation;
  e << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "sweep" << YAML::Value << YAML::Flow << ev.sweep;
  e << YAML::Key << "include_blank" << YAML::Value << ev.include_blank;
  e << YAML::Key << "threshold" << YAML::Value << ev.threshold;
  e << YAML::Key << "margin" << YAML::Value << ev.margin;
  std::vector<std::string> suites;
  for (auto s2 : ev.ablations) suites.push_back(evaluation::to_string(s2));
  e << YAML::Key << "ablations" << YAML::Value << YAML::Flow << suites;
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

json canonical_json(const ExperimentConfig& c) {
  const auto& s = c.dataset.synthetic;
  std::vector<std::string> kinds, suites;
  for (auto k : c.baselines.kinds) kinds.push_back(baselines::to_string(k));
  for (auto a : c.evaluation.ablations) suites.push_back(evaluation::to_string(a));
  return json{
      {"version", c.version},
      {"seeds", c.seeds},
      {"dataset",
       {{"source", c.dataset.source},
        {"directory", c.dataset.directory.string()},
        {"synthetic",
         {{"num_classes", s.num_classes},
          {"samples_per_class", s.samples_per_class},
          {"image_size", s.image_size},
          {"frames_per_clip", s.frames_per_clip},
          {"modality_a_informativeness", s.modality_a_informativeness},
          {"modality_b_informativeness", s.modality_b_informativeness},
          {"overlap", s.overlap},
          {"seed", s.seed},
          {"test_fraction", s.test_fraction},
          {"validation_fraction", s.validation_fraction},
          {"pixel_noise", s.pixel_noise}}}}},
      {"model",
       {{"widths", c.model.widths},
        {"width_multiplier", c.model.width_multiplier},
        {"units_per_stage", c.model.units_per_stage},
        {"feature_width", c.model.feature_width},
        {"bottleneck", models::to_string(c.model.bottleneck)},
        {"bottleneck_dim", c.model.bottleneck_dim},
        {"discriminator", models::to_string(c.model.discriminator)},
        {"discriminator_widths", c.model.discriminator_widths}}},
      {"training",
       {{"step1",
         {{"optimizer", optimizer_json(c.step1.optimizer)},
          {"epochs", c.step1.epochs},
          {"batch_size", c.step1.batch_size}}},
        {"step2",
         {{"generator", optimizer_json(c.step2.generator)},
          {"discriminator", optimizer_json(c.step2.discriminator)},
          {"steps", c.step2.steps},
          {"batch_size", c.step2.batch_size},
          {"discriminator_updates_per_step", c.step2.discriminator_updates_per_step},
          {"objective", training::to_string(c.step2.objective)},
          {"task", training::to_string(c.step2.task)},
          {"frame_conditioning", c.step2.frame_conditioning},
          {"eval_every", c.step2.eval_every}}}}},
      {"baselines",
       {{"kinds", kinds},
        {"moddrop",
         {{"drop_a", c.baselines.moddrop_drop_a},
          {"drop_b", c.baselines.moddrop_drop_b},
          {"image_dropout", c.baselines.moddrop_image_dropout},
          {"image_dropout_rate", c.baselines.moddrop_image_dropout_rate},
          {"epochs", c.baselines.moddrop_epochs},
          {"optimizer", optimizer_json(c.baselines.moddrop_optimizer)}}},
        {"autoencoder",
         {{"decoder_blocks", c.baselines.autoencoder_decoder_blocks},
          {"epochs", c.baselines.autoencoder_epochs},
          {"optimizer", optimizer_json(c.baselines.autoencoder_optimizer)}}},
        {"euclidean",
         {{"feature_weight", c.baselines.euclidean_feature_weight},
          {"class_weight", c.baselines.euclidean_class_weight},
          {"sweep", c.baselines.euclidean_sweep}}}}},
      {"evaluation",
       {{"sweep", c.evaluation.sweep},
        {"include_blank", c.evaluation.include_blank},
        {"threshold", c.evaluation.threshold},
        {"margin", c.evaluation.margin},
        {"ablations", suites}}}};
}

std::string config_hash(const ExperimentConfig& c) { return io::hex64(fnv1a64(canonical_json(c).dump())); }

}  // namespace admd::config
