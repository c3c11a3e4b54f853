// Command-line front end for the staged pipeline.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "admd/config.hpp"
#include "admd/errors.hpp"
#include "admd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace admd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDependency = 3, kTraining = 4 };

struct Globals {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string output_root;
  bool quiet = false;
};

config::ExperimentConfig load_config(const Globals& g) {
  auto cfg = g.config.empty() ? config::ExperimentConfig{} : config::parse_config(g.config);
  if (!g.seeds.empty()) cfg.seeds = g.seeds;
  cfg.validate();
  return cfg;
}

pipeline::RunOptions base_options(const Globals& g) {
  pipeline::RunOptions o;
  o.output_root = g.output_root;
  if (!g.quiet) o.log = [](const std::string& msg) { std::cerr << "[admd] " << msg << '\n'; };
  return o;
}

void print_manifest(const pipeline::ArtifactManifest& m) {
  std::cout << "run directory: " << m.run_dir.string() << "\n";
  std::cout << "config hash:   " << m.config_hash << "\n";
  if (m.executed.empty()) {
    std::cout << "nothing to do (all requested stages already complete)\n";
  } else {
    std::cout << "executed:";
    for (const auto& e : m.executed) std::cout << ' ' << e;
    std::cout << '\n';
  }
  std::cout << m.artifacts.size() << " artifacts listed in " << (m.run_dir / "manifest.json").string() << "\n";
}

int run_stages(const config::ExperimentConfig& cfg, const std::vector<pipeline::Stage>& stages,
               pipeline::RunOptions options) {
  print_manifest(pipeline::run_pipeline(cfg, stages, options));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial modality distillation experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config, "Experiment config (YAML)")->check(CLI::ExistingFile);
  app.add_option("-s,--seed", g.seeds, "Root seed(s); overrides the config's seeds");
  app.add_option("-o,--output-root", g.output_root,
                 std::string("Output root; defaults to $") + pipeline::kOutputRootVariable + " or the config");
  app.add_flag("-q,--quiet", g.quiet, "No progress messages");

  std::function<int()> action;

  auto* prep = app.add_subcommand("prepare-data", "Generate or import the dataset");
  std::string dataset_dir, synthetic_spec;
  prep->add_option("--dataset-dir", dataset_dir, "Import a dataset directory instead of generating one")
      ->check(CLI::ExistingDirectory);
  prep->add_option("--synthetic-spec", synthetic_spec, "Synthetic task spec (YAML)")->check(CLI::ExistingFile);
  prep->callback([&] {
    action = [&] {
      auto cfg = load_config(g);
      if (!dataset_dir.empty()) {
        cfg.dataset.source = "directory";
        cfg.dataset.directory = fs::absolute(dataset_dir);
      }
      if (!synthetic_spec.empty()) {
        cfg.dataset.source = "synthetic";
        cfg.dataset.synthetic = config::parse_synthetic_spec(synthetic_spec);
      }
      return run_stages(cfg, {pipeline::Stage::Data}, base_options(g));
    };
  });

  auto* train = app.add_subcommand("train", "Training steps");
  train->require_subcommand(1);
  auto* step1 = train->add_subcommand("step1", "Supervised stream training");
  std::string modality;
  step1->add_option("--modality", modality, "Train only this stream")->check(CLI::IsMember({"a", "b"}));
  step1->callback([&] {
    action = [&] {
      auto o = base_options(g);
      if (!modality.empty()) o.modality = data::modality_from_string(modality);
      return run_stages(load_config(g), {pipeline::Stage::Step1}, o);
    };
  });
  auto* step2 = train->add_subcommand("step2", "Adversarial hallucination training");
  std::string teacher;
  step2->add_option("--teacher", teacher, "Teacher checkpoint (default: the step1 B stream)")
      ->check(CLI::ExistingFile);
  step2->callback([&] {
    action = [&] {
      auto o = base_options(g);
      o.teacher = teacher;
      return run_stages(load_config(g), {pipeline::Stage::Step2}, o);
    };
  });

  auto* baseline = app.add_subcommand("baseline", "Comparison methods");
  baseline->require_subcommand(1);
  auto* baseline_run = baseline->add_subcommand("run", "Train and score baselines");
  std::vector<std::string> kinds;
  std::vector<std::string> kind_names;
  for (auto k : baselines::all_kinds()) kind_names.push_back(baselines::to_string(k));
  baseline_run->add_option("--kind", kinds, "Baseline kind (repeatable; default: the config's list)")
      ->check(CLI::IsMember(kind_names));
  baseline_run->callback([&] {
    action = [&] {
      auto o = base_options(g);
      for (const auto& k : kinds) o.baseline_kinds.push_back(baselines::kind_from_string(k));
      return run_stages(load_config(g), {pipeline::Stage::Baselines}, o);
    };
  });

  auto* evaluate = app.add_subcommand("evaluate", "Score A, B, two-stream and ADMD on the test split");
  evaluate->callback([&] {
    action = [&] { return run_stages(load_config(g), {pipeline::Stage::Eval}, base_options(g)); };
  });

  auto* sweep = app.add_subcommand("noise-sweep", "Speckle noise on modality B and switch-point detection");
  sweep->callback([&] {
    action = [&] { return run_stages(load_config(g), {pipeline::Stage::Sweep}, base_options(g)); };
  });

  auto* ablate = app.add_subcommand("ablate", "Bottleneck and discriminator ablations");
  std::vector<std::string> suites;
  ablate->add_option("--suite", suites, "Ablation suite (repeatable; default: the config's list)")
      ->check(CLI::IsMember({"bottleneck-size", "bottleneck-variant", "discriminator-task"}));
  ablate->callback([&] {
    action = [&] {
      auto o = base_options(g);
      for (const auto& s : suites) o.ablations.push_back(evaluation::ablation_suite_from_string(s));
      return run_stages(load_config(g), {pipeline::Stage::Ablate}, o);
    };
  });

  auto* report = app.add_subcommand("report", "Render result tables");
  bool plot = false;
  std::string run_dir;
  report->add_flag("--plot", plot, "Also write the noise-sweep plot (SVG)");
  report->add_option("--run-dir", run_dir, "Run directory (default: derived from the config)");
  report->callback([&] {
    action = [&] {
      if (!run_dir.empty()) {
        auto out = pipeline::emit_report(run_dir, plot);
        std::cout << out.markdown.string() << "\n" << out.summary.string() << "\n";
        if (!out.plot.empty()) std::cout << out.plot.string() << "\n";
        return static_cast<int>(kOk);
      }
      auto o = base_options(g);
      o.plot = plot;
      return run_stages(load_config(g), {pipeline::Stage::Report}, o);
    };
  });

  auto* run = app.add_subcommand("run", "Run several stages in order");
  std::string stages = "all";
  bool run_plot = true;
  run->add_option("--stages", stages, "Comma separated: data,step1,step2,baselines,eval,sweep,ablate,report or all");
  run->add_flag("--plot,!--no-plot", run_plot, "Write the noise-sweep plot with the report");
  run->callback([&] {
    action = [&] {
      auto o = base_options(g);
      o.plot = run_plot;
      return run_stages(load_config(g), pipeline::parse_stages(stages), o);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    return action ? action() : kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
    return kConfig;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return kDependency;
  } catch (const ReportError& e) {
    std::cerr << "report error: " << e.what() << '\n';
    return kDependency;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    if (!e.last_good_checkpoint().empty()) std::cerr << "last good checkpoint: " << e.last_good_checkpoint() << '\n';
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
