#include "admd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"
#include "admd/tensor_io.hpp"

namespace admd::pipeline {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Data: return "data";
    case Stage::Step1: return "step1";
    case Stage::Step2: return "step2";
    case Stage::Baselines: return "baselines";
    case Stage::Eval: return "eval";
    case Stage::Sweep: return "sweep";
    case Stage::Ablate: return "ablate";
    case Stage::Report: return "report";
  }
  return "?";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = {Stage::Data,  Stage::Step1, Stage::Step2,  Stage::Baselines,
                                            Stage::Eval,  Stage::Sweep, Stage::Ablate, Stage::Report};
  return stages;
}

Stage stage_from_string(const std::string& name) {
  for (auto s : all_stages()) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + name + "' (expected data, step1, step2, baselines, eval, sweep, ablate or report)");
}

std::vector<Stage> parse_stages(const std::string& list) {
  std::vector<Stage> picked;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "all") return all_stages();
    picked.push_back(stage_from_string(item));
  }
  if (picked.empty()) throw ConfigError("no stages selected");
  std::vector<Stage> ordered;
  for (auto s : all_stages()) {
    if (std::find(picked.begin(), picked.end(), s) != picked.end()) ordered.push_back(s);
  }
  return ordered;
}

fs::path output_root(const config::ExperimentConfig& config, const RunOptions& options) {
  if (!options.output_root.empty()) return options.output_root;
  if (const char* env = std::getenv(kOutputRootVariable); env && *env) return env;
  return config.output_dir;
}

fs::path run_directory(const config::ExperimentConfig& config, const RunOptions& options) {
  return output_root(config, options) / config::config_hash(config);
}

std::vector<Artifact> ArtifactManifest::of_kind(const std::string& kind) const {
  std::vector<Artifact> out;
  for (const auto& a : artifacts) {
    if (a.kind == kind) out.push_back(a);
  }
  return out;
}

json ArtifactManifest::to_json() const {
  json arts = json::array();
  for (const auto& a : artifacts) {
    arts.push_back(json{{"stage", a.stage}, {"seed", a.seed}, {"kind", a.kind}, {"path", a.path.generic_string()}});
  }
  return json{{"config_hash", config_hash}, {"artifacts", arts}};
}

ArtifactManifest read_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw DependencyError("no manifest in " + run_dir.string());
  auto j = json::parse(in);
  ArtifactManifest m;
  m.run_dir = run_dir;
  m.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& a : j.at("artifacts")) {
    m.artifacts.push_back({a.at("stage").get<std::string>(), a.at("seed").get<std::string>(),
                           a.at("kind").get<std::string>(), a.at("path").get<std::string>()});
  }
  return m;
}

namespace {

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return json::parse(in);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string seed_dir(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

// Indices into the per-seed substreams.
enum Slot : std::uint64_t {
  kStreamA = 0,
  kStreamB = 1,
  kAdversarial = 2,
  kEnsemble = 3,
  kAutoencoder = 4,
  kProbe = 5,
  kModDrop = 6,
};

class Runner {
 public:
  Runner(const config::ExperimentConfig& cfg, const RunOptions& options)
      : cfg_(cfg), options_(options), hash_(config::config_hash(cfg)), dir_(run_directory(cfg, options)) {}

  ArtifactManifest run(const std::vector<Stage>& stages) {
    fs::create_directories(dir_);
    const auto config_path = dir_ / "config.yaml";
    if (!fs::exists(config_path)) {
      std::ofstream(config_path) << config::serialize(cfg_);
    }
    for (auto stage : stages) {
      if (stage == Stage::Data) {
        run_data();
      } else if (stage == Stage::Report) {
        run_report();
      } else {
        for (auto seed : cfg_.seeds) run_seeded(stage, seed);
      }
    }
    manifest_.config_hash = hash_;
    manifest_.run_dir = dir_;
    collect_artifacts();
    write_json(dir_ / "manifest.json", manifest_.to_json());
    return manifest_;
  }

 private:
  // --- bookkeeping ------------------------------------------------------------------

  // A stage (or one part of it: a stream, a baseline kind, an ablation suite)
  // is complete when its marker exists and carries the current config hash.
  fs::path marker(const std::string& stage, const std::string& seed, const std::string& part = {}) const {
    return (seed.empty() ? dir_ / stage : dir_ / seed / stage) / (part.empty() ? ".done" : ".done-" + part);
  }

  bool done(const std::string& stage, const std::string& seed = {}, const std::string& part = {},
            const json& extra = json::object()) const {
    const auto m = marker(stage, seed, part);
    if (!fs::exists(m)) return false;
    const auto j = read_json(m);
    if (j.value("config_hash", "") != hash_) return false;
    for (const auto& [k, v] : extra.items()) {
      if (!j.contains(k) || j[k] != v) return false;
    }
    return true;
  }

  void require(Stage needed, Stage by, const std::string& seed = {}) const {
    if (!done(to_string(needed), needed == Stage::Data ? std::string() : seed)) {
      throw DependencyError("stage " + to_string(by) + " requires stage " + to_string(needed) +
                            (seed.empty() ? std::string() : " (" + seed + ")") + " to have completed in " +
                            dir_.string());
    }
  }

  void finish(const std::string& stage, const std::string& seed, const std::vector<Artifact>& artifacts,
              const std::string& part = {}, const json& extra = json::object()) {
    json arts = json::array();
    for (const auto& a : artifacts) arts.push_back(json{{"kind", a.kind}, {"path", a.path.generic_string()}});
    json m{{"config_hash", hash_}, {"stage", stage}, {"seed", seed}, {"artifacts", arts}};
    if (!part.empty()) m["part"] = part;
    m.update(extra);
    write_json(marker(stage, seed, part), m);
    std::string tag = seed.empty() ? stage : stage + ":" + seed;
    if (!part.empty()) tag += ":" + part;
    manifest_.executed.push_back(tag);
  }

  void collect_artifacts() {
    manifest_.artifacts.clear();
    auto add_from = [&](const fs::path& stage_dir) {
      if (!fs::is_directory(stage_dir)) return;
      std::vector<fs::path> markers;
      for (const auto& e : fs::directory_iterator(stage_dir)) {
        if (e.path().filename().string().rfind(".done", 0) == 0) markers.push_back(e.path());
      }
      std::sort(markers.begin(), markers.end());
      for (const auto& m : markers) {
        auto j = read_json(m);
        if (j.value("config_hash", "") != hash_) continue;
        for (const auto& a : j.at("artifacts")) {
          manifest_.artifacts.push_back({j.at("stage").get<std::string>(), j.at("seed").get<std::string>(),
                                         a.at("kind").get<std::string>(), a.at("path").get<std::string>()});
        }
      }
    };
    add_from(dir_ / "data");
    for (auto seed : cfg_.seeds) {
      for (auto s : all_stages()) {
        if (s != Stage::Data && s != Stage::Report) add_from(dir_ / seed_dir(seed) / to_string(s));
      }
    }
    add_from(dir_ / "report");
  }

  void say(const std::string& msg) const {
    if (options_.log) options_.log(msg);
  }

  void write_log(const fs::path& path, std::vector<json> records, std::uint64_t seed) const {
    for (auto& r : records) {
      r["config_hash"] = hash_;
      r["seed"] = seed;
    }
    write_jsonl(path, records);
  }

  // --- dataset / models ---------------------------------------------------------------

  const data::Dataset& dataset() {
    if (!dataset_) {
      require(Stage::Data, Stage::Step1);
      dataset_ = data::load_dataset(dir_ / "data", cfg_.dataset.synthetic.frames_per_clip);
    }
    return *dataset_;
  }

  models::EncoderConfig encoder() {
    const auto& ds = dataset();
    return cfg_.encoder(ds.num_classes, ds.frames_per_clip, ds.image_size);
  }

  fs::path rel(const std::string& seed, const std::string& stage, const std::string& file) const {
    return fs::path(seed) / stage / file;
  }

  models::StreamEncoder load_stream(const std::string& seed, const char* which) {
    return models::load_encoder(dir_ / rel(seed, "step1", std::string(which) + ".ckpt"));
  }

  training::Step1Config step1_config(std::uint64_t seed, Slot slot, const fs::path& ckpt) const {
    auto c = cfg_.step1_config(SeedTree(seed).seed("train", slot));
    c.checkpoint_path = ckpt;
    c.config_hash = hash_;
    return c;
  }

  training::AdversarialConfig adversarial(std::uint64_t seed) const {
    auto c = cfg_.adversarial_config(SeedTree(seed).seed("train", kAdversarial));
    c.init_seed = SeedTree(seed).seed("init", kAdversarial);
    return c;
  }

  // --- stages -------------------------------------------------------------------------

  void run_data() {
    if (done("data")) return;
    say("data: preparing dataset");
    const auto out = dir_ / "data";
    if (cfg_.dataset.source == "synthetic") {
      auto ds = data::generate_synthetic(cfg_.dataset.synthetic);
      data::save_dataset(ds, out, cfg_.dataset.synthetic, hash_);
    } else {
      auto ds = data::load_dataset(cfg_.dataset.directory, cfg_.dataset.synthetic.frames_per_clip);
      data::save_dataset(ds, out, std::nullopt, hash_);
    }
    finish("data", {}, {{"", "", "dataset", fs::path("data") / "manifest.jsonl"}});
  }

  void run_seeded(Stage stage, std::uint64_t seed) {
    const auto sd = seed_dir(seed);
    switch (stage) {
      case Stage::Step1: return step1(seed, sd);
      case Stage::Step2: return step2(seed, sd);
      case Stage::Baselines: return run_baselines(seed, sd);
      case Stage::Eval: return done("eval", sd) ? void() : eval(seed, sd);
      case Stage::Sweep: return done("sweep", sd) ? void() : sweep(seed, sd);
      case Stage::Ablate: return ablate(seed, sd);
      default: return;
    }
  }

  void require_stream(const std::string& sd, const char* which, Stage by) const {
    if (!done("step1", sd, which)) {
      throw DependencyError("stage " + to_string(by) + " requires stage step1 (" + sd + ", stream " + which +
                            ") to have completed in " + dir_.string());
    }
  }

  void step1(std::uint64_t seed, const std::string& sd) {
    if (done("step1", sd)) return;
    require(Stage::Data, Stage::Step1);
    for (auto [modality, slot, which] : {std::tuple{data::Modality::A, kStreamA, "a"},
                                         std::tuple{data::Modality::B, kStreamB, "b"}}) {
      if (options_.modality && *options_.modality != modality) continue;
      if (done("step1", sd, which)) continue;
      const auto& ds = dataset();
      say("step1 " + sd + ": training stream " + which);
      const auto ckpt = rel(sd, "step1", std::string(which) + ".ckpt");
      const auto log = rel(sd, "step1", std::string(which) + ".jsonl");
      const auto summary = rel(sd, "step1", std::string(which) + ".json");
      fs::create_directories((dir_ / ckpt).parent_path());
      auto r = training::train_step1(models::build_encoder(encoder(), SeedTree(seed).seed("init", slot)), ds,
                                     modality, step1_config(seed, slot, dir_ / ckpt));
      models::save_encoder(dir_ / ckpt, *r.encoder, hash_);
      write_log(dir_ / log, r.log, seed);
      write_json(dir_ / summary,
                 json{{"config_hash", hash_},
                      {"seed", seed},
                      {"modality", data::to_string(modality)},
                      {"best_validation_accuracy", r.best_validation_accuracy},
                      {"best_epoch", r.best_epoch},
                      {"test_accuracy",
                       evaluation::split_accuracy(evaluation::stream_logits(r.encoder, modality), ds.test)}});
      finish("step1", sd, {{"", "", std::string("stream_") + which, ckpt}, {"", "", "log", log},
                           {"", "", "summary", summary}},
             which);
    }
    if (done("step1", sd, "a") && done("step1", sd, "b")) finish("step1", sd, {});
  }

  /// Step-2 teacher: the --teacher checkpoint when one was used, else the step1 B stream.
  models::StreamEncoder teacher_of(const std::string& sd) {
    const auto summary = dir_ / rel(sd, "step2", "summary.json");
    if (fs::exists(summary)) {
      const auto t = read_json(summary).value("teacher", "");
      if (!t.empty()) return models::load_encoder(t);
    }
    return load_stream(sd, "b");
  }

  void step2(std::uint64_t seed, const std::string& sd) {
    const auto teacher_path = options_.teacher.empty() ? std::string() : fs::absolute(options_.teacher).string();
    const json extra{{"teacher", teacher_path}};
    if (done("step2", sd, {}, extra)) return;
    if (teacher_path.empty()) {
      require(Stage::Step1, Stage::Step2, sd);
    } else {
      require(Stage::Data, Stage::Step2);
      if (!fs::exists(teacher_path)) throw DependencyError("teacher checkpoint " + teacher_path + " does not exist");
    }
    const auto& ds = dataset();
    auto b = teacher_path.empty() ? load_stream(sd, "b") : models::load_encoder(teacher_path);
    std::optional<models::StreamEncoder> a;
    if (done("step1", sd, "a")) a = load_stream(sd, "a");
    say("step2 " + sd + ": adversarial hallucination training");
    auto r = training::train_step2(b, ds, adversarial(seed), a);
    const auto h = rel(sd, "step2", "hallucination.ckpt");
    const auto d = rel(sd, "step2", "discriminator.ckpt");
    const auto log = rel(sd, "step2", "log.jsonl");
    fs::create_directories((dir_ / h).parent_path());
    models::save_encoder(dir_ / h, *r.hallucination, hash_);
    models::save_discriminator(dir_ / d, *r.discriminator, hash_);
    write_log(dir_ / log, r.log, seed);
    const json& last = r.log.back();
    const double d_acc = last.value("discriminator_accuracy", 0.0);
    const double fake_p = last.value("validation_fake_probability", 0.0);
    write_json(dir_ / rel(sd, "step2", "summary.json"),
               json{{"config_hash", hash_},
                    {"seed", seed},
                    {"teacher", teacher_path},
                    {"best_step", r.best_step},
                    {"best_validation_accuracy", r.best_validation_accuracy},
                    {"teacher_hash_before", io::hex64(r.teacher_hash_before)},
                    {"teacher_hash_after", io::hex64(r.teacher_hash_after)},
                    {"final_discriminator_accuracy", d_acc},
                    {"final_fake_probability", fake_p}});
    finish("step2", sd,
           {{"", "", "hallucination", h},
            {"", "", "discriminator", d},
            {"", "", "log", log},
            {"", "", "summary", rel(sd, "step2", "summary.json")}},
           {}, extra);
  }

  double fused_test(models::StreamEncoder a, models::StreamEncoder h) {
    auto sa = evaluation::stream_logits(a, data::Modality::A);
    auto sh = evaluation::stream_logits(h, data::Modality::A);
    return evaluation::split_accuracy(
        [sa, sh](const data::ClipBatch& batch) { return training::fuse_logits(sa(batch), sh(batch)); },
        dataset().test);
  }

  void run_baselines(std::uint64_t seed, const std::string& sd) {
    if (done("baselines", sd) && options_.baseline_kinds.empty()) return;
    require(Stage::Step1, Stage::Baselines, sd);
    const auto& ds = dataset();
    const auto ec = encoder();
    auto a = load_stream(sd, "a");
    auto b = load_stream(sd, "b");
    const SeedTree tree(seed);
    std::vector<Artifact> arts;
    auto base = [&](const std::string& kind, const std::string& file) { return rel(sd, "baselines/" + kind, file); };
    auto record = [&](const std::string& kind, json result, const std::vector<json>& log) {
      result["config_hash"] = hash_;
      result["seed"] = seed;
      result["kind"] = kind;
      write_json(dir_ / base(kind, "result.json"), result);
      arts.push_back({"", "", "baseline_result", base(kind, "result.json")});
      if (!log.empty()) {
        write_log(dir_ / base(kind, "log.jsonl"), log, seed);
        arts.push_back({"", "", "log", base(kind, "log.jsonl")});
      }
    };
    auto checkpoint = [&](const std::string& kind, const std::string& file, auto&& save) {
      const auto p = base(kind, file);
      fs::create_directories((dir_ / p).parent_path());
      save(dir_ / p);
      arts.push_back({"", "", "checkpoint", p});
    };

    const auto& kinds = options_.baseline_kinds.empty() ? cfg_.baselines.kinds : options_.baseline_kinds;
    for (auto kind : kinds) {
      const auto name = baselines::to_string(kind);
      if (done("baselines", sd, name)) continue;
      arts.clear();
      say("baselines " + sd + ": " + name);
      switch (kind) {
        case baselines::Kind::RgbEnsemble: {
          auto s1 = step1_config(seed, kEnsemble, {});
          auto r = baselines::train_rgb_ensemble(ds, ec, s1, tree.seed("init", kStreamA),
                                                 tree.seed("init", kEnsemble), a);
          checkpoint(name, "member2.ckpt", [&](const fs::path& p) { models::save_encoder(p, *r.second, hash_); });
          record(name,
                 json{{"member_accuracy", {r.first_accuracy, r.second_accuracy}},
                      {"ensemble_accuracy", r.ensemble_accuracy}},
                 r.log);
          break;
        }
        case baselines::Kind::ModDrop: {
          baselines::ModDropConfig mc;
          mc.optimizer = cfg_.baselines.moddrop_optimizer;
          mc.epochs = cfg_.baselines.moddrop_epochs;
          mc.batch_size = cfg_.step1.batch_size;
          mc.drop_a = cfg_.baselines.moddrop_drop_a;
          mc.drop_b = cfg_.baselines.moddrop_drop_b;
          mc.image_dropout = cfg_.baselines.moddrop_image_dropout;
          mc.image_dropout_rate = cfg_.baselines.moddrop_image_dropout_rate;
          mc.seed = tree.seed("train", kModDrop);
          mc.drop_seed = tree.seed("moddrop");
          auto r = baselines::train_moddrop(*a, *b, ds, mc);
          checkpoint(name, "a.ckpt", [&](const fs::path& p) { models::save_encoder(p, *r.a, hash_); });
          checkpoint(name, "b.ckpt", [&](const fs::path& p) { models::save_encoder(p, *r.b, hash_); });
          auto acc = [&](models::StreamEncoder x, models::StreamEncoder y, bool blank) {
            return evaluation::split_accuracy(baselines::two_stream_logits(x, y, blank), ds.test);
          };
          record(name,
                 json{{"accuracy", acc(r.a, r.b, false)},
                      {"accuracy_blank_b", acc(r.a, r.b, true)},
                      {"two_stream_accuracy", acc(a, b, false)},
                      {"two_stream_accuracy_blank_b", acc(a, b, true)}},
                 r.log);
          break;
        }
        case baselines::Kind::CrossModalAutoencoder: {
          baselines::AutoencoderConfig ac;
          ac.optimizer = cfg_.baselines.autoencoder_optimizer;
          ac.epochs = cfg_.baselines.autoencoder_epochs;
          ac.batch_size = cfg_.step1.batch_size;
          ac.decoder_blocks = cfg_.baselines.autoencoder_decoder_blocks;
          ac.seed = tree.seed("train", kAutoencoder);
          ac.init_seed = tree.seed("init", kAutoencoder);
          auto r = baselines::train_autoencoder_baseline(ds, a, b, ac);
          checkpoint(name, "autoencoder.ckpt", [&](const fs::path& p) {
            models::save_checkpoint(p, *r.autoencoder, "autoencoder",
                                    json{{"encoder", ec.to_json()}, {"decoder_blocks", ac.decoder_blocks}}, hash_);
          });
          record(name,
                 json{{"train_reconstruction_error", r.train_reconstruction_error},
                      {"test_reconstruction_error", r.test_reconstruction_error},
                      {"downstream_accuracy", r.downstream_accuracy},
                      {"fused_accuracy", r.fused_accuracy}},
                 r.log);
          break;
        }
        case baselines::Kind::NaiveBinaryGan: {
          auto r = baselines::train_naive_binary_gan(b, ds, adversarial(seed), a);
          checkpoint(name, "hallucination.ckpt",
                     [&](const fs::path& p) { models::save_encoder(p, *r.hallucination, hash_); });
          checkpoint(name, "discriminator.ckpt",
                     [&](const fs::path& p) { models::save_discriminator(p, *r.discriminator, hash_); });
          const double h_acc = evaluation::split_accuracy(
              evaluation::stream_logits(r.hallucination, data::Modality::A), ds.test);
          record(name,
                 json{{"hallucination_accuracy", h_acc},
                      {"fused_accuracy", fused_test(a, r.hallucination)},
                      {"final_discriminator_accuracy", r.log.back().value("discriminator_accuracy", 0.0)},
                      {"probe_accuracy", baselines::feature_probe_accuracy(*r.hallucination, *b, ds,
                                                                           tree.seed("init", kProbe))}},
                 r.log);
          break;
        }
        case baselines::Kind::EuclideanHallucination: {
          auto weights = cfg_.baselines.euclidean_sweep;
          if (std::find(weights.begin(), weights.end(), cfg_.baselines.euclidean_class_weight) == weights.end()) {
            weights.push_back(cfg_.baselines.euclidean_class_weight);
          }
          json rows = json::array();
          std::vector<json> log;
          for (double w : weights) {
            baselines::EuclideanConfig eu;
            eu.optimizer = cfg_.step2.generator;
            eu.steps = cfg_.step2.steps;
            eu.batch_size = cfg_.step2.batch_size;
            eu.eval_every = cfg_.step2.eval_every;
            eu.feature_weight = cfg_.baselines.euclidean_feature_weight;
            eu.class_weight = w;
            eu.seed = tree.seed("train", kAdversarial);
            auto r = baselines::train_euclidean_hallucination(b, ds, eu, a);
            std::ostringstream tag;
            tag << "w" << w;
            checkpoint(name, "hallucination_" + tag.str() + ".ckpt",
                       [&](const fs::path& p) { models::save_encoder(p, *r.hallucination, hash_); });
            rows.push_back(json{{"class_weight", w},
                                {"hallucination_accuracy",
                                 evaluation::split_accuracy(evaluation::stream_logits(r.hallucination, data::Modality::A),
                                                            ds.test)},
                                {"fused_accuracy", fused_test(a, r.hallucination)},
                                {"initial_distance", r.initial_distance},
                                {"final_distance", r.final_distance}});
            for (auto rec : r.log) {
              rec["class_weight"] = w;
              log.push_back(rec);
            }
          }
          record(name, json{{"weights", rows}}, log);
          break;
        }
      }
      finish("baselines", sd, arts, name);
    }
    bool all_done = true;
    for (auto kind : cfg_.baselines.kinds) all_done = all_done && done("baselines", sd, baselines::to_string(kind));
    if (all_done && !done("baselines", sd)) finish("baselines", sd, {});
  }

  void eval(std::uint64_t seed, const std::string& sd) {
    require(Stage::Step2, Stage::Eval, sd);
    require_stream(sd, "a", Stage::Eval);
    const auto& ds = dataset();
    auto a = load_stream(sd, "a");
    auto b = teacher_of(sd);
    auto h = models::load_encoder(dir_ / rel(sd, "step2", "hallucination.ckpt"));
    auto d = models::load_discriminator(dir_ / rel(sd, "step2", "discriminator.ckpt"));
    say("eval " + sd);
    using evaluation::stream_logits;
    auto sa = stream_logits(a, data::Modality::A);
    auto sb = stream_logits(b, data::Modality::B);
    auto sh = stream_logits(h, data::Modality::A);
    auto admd = evaluation::evaluate({{"a", sa}, {"hallucination", sh}}, ds.test, evaluation::Fusion::AverageLogits,
                                     ds.num_classes);
    auto two = evaluation::evaluate({{"a", sa}, {"b", sb}}, ds.test, evaluation::Fusion::AverageLogits,
                                    ds.num_classes);
    evaluation::EvalReport report = admd;
    report.accuracy["b"] = two.accuracy["b"];
    report.per_class["b"] = two.per_class["b"];
    report.accuracy["two_stream"] = *two.fused_accuracy;
    report.per_class["two_stream"] = two.fused_per_class;
    report.accuracy["admd"] = *admd.fused_accuracy;
    report.per_class["admd"] = admd.fused_per_class;
    torch::Tensor feats;
    {
      torch::NoGradGuard no_grad;
      h->eval();
      std::vector<torch::Tensor> chunks;
      for (std::int64_t i = 0; i < ds.test.size(); i += 64) {
        chunks.push_back(h->features(ds.test.modality_a.slice(0, i, std::min(ds.test.size(), i + 64))));
      }
      feats = torch::cat(chunks, 0);
    }
    report.fake_probability =
        training::mean_fake_probability(*d, feats, d->config().conditioning_dim > 0);
    report.config_hash = hash_;
    report.seed = seed;
    report.timestamp = utc_now();
    const auto path = rel(sd, "eval", "report.json");
    write_json(dir_ / path, report.to_json());
    finish("eval", sd, {{"", "", "eval_report", path}});
  }

  void sweep(std::uint64_t seed, const std::string& sd) {
    require(Stage::Step2, Stage::Sweep, sd);
    require_stream(sd, "a", Stage::Sweep);
    const auto& ds = dataset();
    say("sweep " + sd);
    evaluation::SweepModels m{load_stream(sd, "a"), teacher_of(sd),
                              models::load_encoder(dir_ / rel(sd, "step2", "hallucination.ckpt")),
                              models::load_discriminator(dir_ / rel(sd, "step2", "discriminator.ckpt"))};
    evaluation::SweepOptions o;
    o.variances = cfg_.evaluation.sweep;
    o.include_blank = cfg_.evaluation.include_blank;
    o.noise_seed = SeedTree(seed).seed("noise");
    o.threshold = cfg_.evaluation.threshold;
    o.margin = cfg_.evaluation.margin;
    auto r = evaluation::noise_sweep(m, ds.test, o);
    auto j = r.to_json();
    j["config_hash"] = hash_;
    j["seed"] = seed;
    j["threshold"] = o.threshold;
    j["margin"] = o.margin;
    const auto path = rel(sd, "sweep", "sweep.json");
    write_json(dir_ / path, j);
    finish("sweep", sd, {{"", "", "sweep", path}});
  }

  void ablate(std::uint64_t seed, const std::string& sd) {
    if (done("ablate", sd) && options_.ablations.empty()) return;
    require(Stage::Step1, Stage::Ablate, sd);
    const auto& ds = dataset();
    const auto base_encoder = encoder();
    const auto base_adv = adversarial(seed);
    auto a = load_stream(sd, "a");
    auto teachers_dir = dir_ / sd / "ablate" / "teachers";
    fs::create_directories(teachers_dir);
    std::vector<Artifact> arts;

    evaluation::TeacherProvider teacher_for = [&](const models::EncoderConfig& ec) -> models::StreamEncoder {
      if (ec == base_encoder) return load_stream(sd, "b");
      const auto file = io::hex64(fnv1a64(ec.to_json().dump())) + ".ckpt";
      const auto path = teachers_dir / file;
      if (fs::exists(path)) return models::load_encoder(path);
      say("ablate " + sd + ": training teacher for bottleneck " + models::to_string(ec.bottleneck));
      auto r = training::train_step1(models::build_encoder(ec, SeedTree(seed).seed("init", kStreamB)), ds,
                                     data::Modality::B, step1_config(seed, kStreamB, path));
      models::save_encoder(path, *r.encoder, hash_);
      arts.push_back({"", "", "checkpoint", fs::path(sd) / "ablate" / "teachers" / file});
      return r.encoder;
    };
    // Arms identical to the main configuration reuse the Step-2 result when present.
    evaluation::Step2Cache cached = [&](const evaluation::AblationArm& arm) -> std::optional<training::Step2Result> {
      const bool same = arm.encoder == base_encoder && arm.adversarial.task == base_adv.task &&
                        arm.adversarial.frame_conditioning == base_adv.frame_conditioning;
      if (!same || !done("step2", sd, {}, json{{"teacher", ""}})) return std::nullopt;
      training::Step2Result r;
      r.hallucination = models::load_encoder(dir_ / rel(sd, "step2", "hallucination.ckpt"));
      r.discriminator = models::load_discriminator(dir_ / rel(sd, "step2", "discriminator.ckpt"));
      return r;
    };

    const auto& suites = options_.ablations.empty() ? cfg_.evaluation.ablations : options_.ablations;
    for (auto suite : suites) {
      const auto name = evaluation::to_string(suite);
      if (done("ablate", sd, name)) continue;
      arts.clear();
      say("ablate " + sd + ": " + name);
      auto table = evaluation::run_ablation(suite, ds, base_encoder, base_adv, teacher_for, a, cached);
      auto j = table.to_json();
      j["config_hash"] = hash_;
      j["seed"] = seed;
      const auto path = rel(sd, "ablate", name + ".json");
      write_json(dir_ / path, j);
      arts.push_back({"", "", "ablation", path});
      finish("ablate", sd, arts, name);
    }
    bool all_done = true;
    for (auto suite : cfg_.evaluation.ablations) all_done = all_done && done("ablate", sd, evaluation::to_string(suite));
    if (all_done && !done("ablate", sd)) finish("ablate", sd, {});
  }

  void run_report() {
    bool any = false;
    for (auto seed : cfg_.seeds) any = any || done("eval", seed_dir(seed));
    if (!any) {
      throw DependencyError("stage report requires stage eval to have completed in " + dir_.string());
    }
    say("report");
    auto out = emit_report(dir_, options_.plot);
    std::vector<Artifact> arts = {{"", "", "report", fs::relative(out.markdown, dir_)},
                                  {"", "", "summary", fs::relative(out.summary, dir_)}};
    if (!out.plot.empty()) arts.push_back({"", "", "plot", fs::relative(out.plot, dir_)});
    finish("report", {}, arts);
  }

  const config::ExperimentConfig& cfg_;
  RunOptions options_;
  std::string hash_;
  fs::path dir_;
  std::optional<data::Dataset> dataset_;
  ArtifactManifest manifest_;
};

// --- report rendering -------------------------------------------------------------------

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

std::string num(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string variance_label(double v) {
  if (v == 0.0) return "0";
  std::ostringstream os;
  os << "1e" << static_cast<int>(std::lround(std::log10(v)));
  if (std::abs(std::log10(v) - std::round(std::log10(v))) > 1e-9) {
    os.str("");
    os << v;
  }
  return os.str();
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      os << "|";
      for (const auto& c : cells) os << " " << c << " |";
      os << "\n";
    };
    line(header);
    os << "|";
    for (std::size_t i = 0; i < header.size(); ++i) os << (i == 0 ? " :--- |" : " ---: |");
    os << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

/// One row: label, one cell per seed, mean, config hash. Missing values print "-".
std::vector<std::string> seed_row(const std::string& label, const std::vector<std::optional<double>>& values,
                                  const std::string& hash, bool percent = true) {
  std::vector<std::string> row = {label};
  double sum = 0.0;
  int n = 0;
  for (const auto& v : values) {
    row.push_back(v ? (percent ? pct(*v) : num(*v)) : "-");
    if (v) {
      sum += *v;
      ++n;
    }
  }
  row.push_back(n > 0 ? (percent ? pct(sum / n) : num(sum / n)) : "-");
  row.push_back(hash);
  return row;
}

std::string svg_plot(const std::vector<evaluation::SweepResult>& sweeps, const std::string& hash) {
  const double w = 640, h = 480, left = 70, right = 20, top = 30, panel = 170, gap = 60;
  const auto& grid = sweeps.front().points;
  const std::size_t n = grid.size();
  auto x_at = [&](std::size_t i) { return left + (w - left - right) * (n > 1 ? double(i) / double(n - 1) : 0.5); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<!-- config " << hash << " -->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto panel_at = [&](int k, const std::string& title) {
    const double y0 = top + k * (panel + gap);
    os << "<text x=\"" << left << "\" y=\"" << y0 - 8 << "\">" << title << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << w - left - right << "\" height=\"" << panel
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double y = y0 + panel * (1.0 - t / 4.0);
      os << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(t / 4.0, 2)
         << "</text>\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
      os << "<text x=\"" << x_at(i) << "\" y=\"" << y0 + panel + 16 << "\" text-anchor=\"middle\">"
         << variance_label(grid[i].variance) << "</text>\n";
    }
    return y0;
  };
  auto polyline = [&](double y0, const std::vector<double>& ys, const char* colour, const char* dash) {
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" stroke-dasharray=\"" << dash
       << "\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) os << x_at(i) << "," << y0 + panel * (1.0 - ys[i]) << " ";
    os << "\"/>\n";
  };
  auto mean_of = [&](auto getter) {
    std::vector<double> out(n, 0.0);
    for (const auto& s : sweeps) {
      for (std::size_t i = 0; i < n && i < s.points.size(); ++i) out[i] += getter(s.points[i]) / sweeps.size();
    }
    return out;
  };
  const double y_acc = panel_at(0, "test accuracy vs noise variance (log scale)");
  polyline(y_acc, mean_of([](const evaluation::SweepPoint& p) { return p.two_stream_accuracy; }), "#c0392b", "none");
  polyline(y_acc, mean_of([](const evaluation::SweepPoint& p) { return p.admd_fused_accuracy; }), "#2471a3", "6,4");
  os << "<text x=\"" << w - right - 200 << "\" y=\"" << y_acc + 16 << "\" fill=\"#c0392b\">two-stream (noisy B)</text>\n";
  os << "<text x=\"" << w - right - 200 << "\" y=\"" << y_acc + 32 << "\" fill=\"#2471a3\">A + hallucination</text>\n";
  const double y_p = panel_at(1, "mean fake-class probability on teacher features");
  polyline(y_p, mean_of([](const evaluation::SweepPoint& p) { return p.fake_probability; }), "#7d3c98", "none");
  os << "</svg>\n";
  return os.str();
}

}  // namespace

ArtifactManifest run_pipeline(const config::ExperimentConfig& config, const std::vector<Stage>& stages,
                              const RunOptions& options) {
  config.validate();
  Runner runner(config, options);
  return runner.run(stages);
}

ReportOutput emit_report(const fs::path& run_dir, bool plot) {
  if (!fs::exists(run_dir / "config.yaml")) throw ReportError("no run found in " + run_dir.string());
  const auto cfg = config::parse_config(run_dir / "config.yaml");
  const auto hash = config::config_hash(cfg);
  std::vector<std::string> seeds;
  for (auto s : cfg.seeds) seeds.push_back(seed_dir(s));

  auto load = [&](const std::string& sd, const fs::path& rel) -> std::optional<json> {
    const auto p = run_dir / sd / rel;
    if (!fs::exists(p)) return std::nullopt;
    return read_json(p);
  };
  std::vector<std::optional<json>> evals;
  bool any = false;
  for (const auto& sd : seeds) {
    evals.push_back(load(sd, "eval/report.json"));
    any = any || evals.back().has_value();
  }
  if (!any) throw ReportError("no evaluation report under " + run_dir.string());

  std::vector<std::string> header = {"Method"};
  for (const auto& sd : seeds) header.push_back(sd);
  header.push_back("mean");
  header.push_back("config");

  auto per_seed = [&](auto getter) {
    std::vector<std::optional<double>> v;
    for (const auto& sd : seeds) v.push_back(getter(sd));
    return v;
  };
  auto eval_acc = [&](const std::string& key) {
    return per_seed([&](const std::string& sd) -> std::optional<double> {
      auto j = load(sd, "eval/report.json");
      if (!j || !(*j)["accuracy"].contains(key)) return std::nullopt;
      return (*j)["accuracy"][key].get<double>();
    });
  };
  auto baseline = [&](const std::string& kind, const std::string& key) {
    return per_seed([&](const std::string& sd) -> std::optional<double> {
      auto j = load(sd, "baselines/" + kind + "/result.json");
      if (!j || !j->contains(key)) return std::nullopt;
      return (*j)[key].get<double>();
    });
  };
  auto best_euclidean = per_seed([&](const std::string& sd) -> std::optional<double> {
    auto j = load(sd, "baselines/euclidean-hallucination/result.json");
    if (!j) return std::nullopt;
    double best = 0.0;
    for (const auto& r : (*j)["weights"]) best = std::max(best, r["fused_accuracy"].get<double>());
    return best;
  });

  json summary{{"config_hash", hash}, {"seeds", cfg.seeds}};
  std::ostringstream md;
  md << "# Results\n\nRun `" << hash << "`, seeds:";
  for (auto s : cfg.seeds) md << " " << s;
  md << ". Accuracies are percentages on the test split.\n\n";

  Table main{header, {}};
  auto add = [&](const std::string& label, const std::string& key, const std::vector<std::optional<double>>& v) {
    main.rows.push_back(seed_row(label, v, hash));
    json vals = json::array();
    for (const auto& x : v) vals.push_back(x ? json(*x) : json(nullptr));
    summary["main"][key] = vals;
  };
  add("A stream", "a", eval_acc("a"));
  add("B stream", "b", eval_acc("b"));
  add("Two-stream (A + B)", "two_stream", eval_acc("two_stream"));
  add("Two-stream (A + blank B)", "two_stream_blank_b", baseline("moddrop", "two_stream_accuracy_blank_b"));
  add("RGB ensemble (A + A)", "rgb_ensemble", baseline("rgb-ensemble", "ensemble_accuracy"));
  add("ModDrop (A + B)", "moddrop", baseline("moddrop", "accuracy"));
  add("ModDrop (A + blank B)", "moddrop_blank_b", baseline("moddrop", "accuracy_blank_b"));
  add("Autoencoder (A + reconstructed B)", "autoencoder", baseline("cross-modal-autoencoder", "fused_accuracy"));
  add("Naive adversarial, 0/1 (A + H)", "naive_binary", baseline("naive-binary-gan", "fused_accuracy"));
  add("Euclidean hallucination, best weight (A + H)", "euclidean", best_euclidean);
  add("Hallucination stream H", "hallucination", eval_acc("hallucination"));
  add("ADMD (A + H)", "admd", eval_acc("admd"));
  md << "## Main comparison\n\n" << main.render() << "\n";

  // Euclidean weight sensitivity.
  {
    std::map<double, std::vector<std::optional<double>>> by_weight;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      auto j = load(seeds[k], "baselines/euclidean-hallucination/result.json");
      if (!j) continue;
      for (const auto& r : (*j)["weights"]) {
        auto& v = by_weight[r["class_weight"].get<double>()];
        v.resize(seeds.size());
        v[k] = r["hallucination_accuracy"].get<double>();
      }
    }
    if (!by_weight.empty()) {
      Table t{header, {}};
      t.header[0] = "Class weight";
      for (auto& [w, v] : by_weight) {
        v.resize(seeds.size());
        t.rows.push_back(seed_row(num(w, 1), v, hash));
        summary["euclidean"][num(w, 1)] = v.front() ? json(*v.front()) : json(nullptr);
      }
      md << "## Euclidean hallucination: H accuracy by loss weight\n\n" << t.render() << "\n";
    }
  }

  // Ablations.
  const std::map<std::string, std::string> titles = {
      {"bottleneck-size", "Bottleneck size"},
      {"bottleneck-variant", "Bottleneck implementation"},
      {"discriminator-task", "Discriminator inputs and task"}};
  for (const auto& [suite, title] : titles) {
    std::vector<std::string> arms;
    std::map<std::string, std::vector<std::optional<double>>> h_acc;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      auto j = load(seeds[k], "ablate/" + suite + ".json");
      if (!j) continue;
      for (const auto& r : (*j)["rows"]) {
        const auto arm = r["arm"].get<std::string>();
        if (!h_acc.count(arm)) arms.push_back(arm);
        auto& v = h_acc[arm];
        v.resize(seeds.size());
        v[k] = r["hallucination_accuracy"].get<double>();
      }
    }
    if (arms.empty()) continue;
    Table t{header, {}};
    t.header[0] = "Arm (H accuracy)";
    for (const auto& arm : arms) {
      auto v = h_acc[arm];
      v.resize(seeds.size());
      t.rows.push_back(seed_row(arm, v, hash));
      summary["ablation"][suite][arm] = v.front() ? json(*v.front()) : json(nullptr);
    }
    md << "## " << title << "\n\n" << t.render() << "\n";
  }

  // Noise sweep.
  std::vector<evaluation::SweepResult> sweeps;
  for (const auto& sd : seeds) {
    if (auto j = load(sd, "sweep/sweep.json")) sweeps.push_back(evaluation::SweepResult::from_json(*j));
  }
  ReportOutput out;
  fs::create_directories(run_dir / "report");
  if (!sweeps.empty()) {
    Table t;
    t.header = {"Row"};
    for (const auto& p : sweeps.front().points) t.header.push_back("var " + variance_label(p.variance));
    if (sweeps.front().blank) t.header.push_back("void");
    t.header.push_back("config");
    for (std::size_t k = 0; k < sweeps.size(); ++k) {
      const auto& s = sweeps[k];
      auto row = [&](const std::string& label, auto getter, bool percent) {
        std::vector<std::string> r = {label + " (" + seeds[k] + ")"};
        for (const auto& p : s.points) r.push_back(percent ? pct(getter(p)) : num(getter(p)));
        if (s.blank) r.push_back(percent ? pct(getter(*s.blank)) : num(getter(*s.blank)));
        r.push_back(hash);
        t.rows.push_back(r);
      };
      row("Two-stream (A + noisy B)", [](const evaluation::SweepPoint& p) { return p.two_stream_accuracy; }, true);
      row("ADMD (A + H)", [](const evaluation::SweepPoint& p) { return p.admd_fused_accuracy; }, true);
      row("Fake-class probability", [](const evaluation::SweepPoint& p) { return p.fake_probability; }, false);
    }
    md << "## Noisy modality B\n\n" << t.render() << "\n";
    for (std::size_t k = 0; k < sweeps.size(); ++k) {
      md << "Switch point (" << seeds[k] << "): "
         << (sweeps[k].switch_point ? variance_label(*sweeps[k].switch_point) : std::string("none")) << "\n";
      summary["sweep"][seeds[k]] = sweeps[k].to_json();
    }
    md << "\n";
    if (plot) {
      out.plot = run_dir / "report" / "sweep.svg";
      std::ofstream(out.plot) << svg_plot(sweeps, hash);
    }
  }

  out.markdown = run_dir / "report" / "report.md";
  out.summary = run_dir / "report" / "summary.json";
  std::ofstream(out.markdown) << md.str();
  write_json(out.summary, summary);
  return out;
}

}  // namespace admd::pipeline
