// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
//   admd_acceptance [output-root]

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "admd/config.hpp"
#include "admd/data.hpp"
#include "admd/evaluation.hpp"
#include "admd/models.hpp"
#include "admd/pipeline.hpp"
#include "admd/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace admd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double v) { return fmt("%.2f", 100.0 * v); }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path source(const std::string& rel) { return fs::path(ADMD_SOURCE_DIR) / rel; }

pipeline::RunOptions options(const fs::path& root) {
  pipeline::RunOptions o;
  o.output_root = root;
  o.log = [](const std::string& line) { std::cerr << "  " << line << "\n"; };
  return o;
}

std::string seed_dir(const config::ExperimentConfig& c) { return "seed-" + std::to_string(c.seeds.front()); }

// Element-wise mean of same-shaped JSON documents; strings and nulls come from the first.
json mean_json(const std::vector<json>& docs) {
  const json& first = docs.front();
  if (first.is_number()) {
    double sum = 0.0;
    for (const auto& d : docs) {
      if (!d.is_number()) return nullptr;
      sum += d.get<double>();
    }
    return sum / static_cast<double>(docs.size());
  }
  if (first.is_object()) {
    json out = json::object();
    for (const auto& [key, value] : first.items()) {
      std::vector<json> parts;
      for (const auto& d : docs)
        if (d.contains(key)) parts.push_back(d.at(key));
      out[key] = parts.size() == docs.size() ? mean_json(parts) : value;
    }
    return out;
  }
  if (first.is_array()) {
    json out = json::array();
    for (std::size_t i = 0; i < first.size(); ++i) {
      std::vector<json> parts;
      for (const auto& d : docs)
        if (d.is_array() && d.size() == first.size()) parts.push_back(d.at(i));
      out.push_back(parts.size() == docs.size() ? mean_json(parts) : first.at(i));
    }
    return out;
  }
  return first;
}

// The same artifact averaged over every seed of the run.
json seed_mean(const fs::path& run_dir, const config::ExperimentConfig& c, const fs::path& rel) {
  std::vector<json> docs;
  for (auto s : c.seeds) docs.push_back(read_json(run_dir / ("seed-" + std::to_string(s)) / rel));
  return mean_json(docs);
}

std::string seeds_note(const config::ExperimentConfig& c) {
  return c.seeds.size() > 1 ? " [mean of " + std::to_string(c.seeds.size()) + " seeds]" : "";
}

// --- criteria --------------------------------------------------------------------------

Outcome temporal_identity(const config::ExperimentConfig& cfg) {
  const auto& s = cfg.dataset.synthetic;
  auto video = models::build_encoder(cfg.encoder(s.num_classes, s.frames_per_clip, s.image_size), 5);
  auto image = models::build_encoder(cfg.encoder(s.num_classes, 1, s.image_size), 5);
  auto spec = s;
  spec.samples_per_class = 4;
  const auto ds = data::generate_synthetic(spec);
  const auto clips = ds.train.modality_a;
  torch::NoGradGuard no_grad;
  video->eval();
  image->eval();
  const auto n = clips.size(0), t = clips.size(1);
  auto fv = video->features(clips);
  auto fi = image->features(clips.reshape({n * t, 1, clips.size(2), clips.size(3), 3})).reshape(fv.sizes());
  const double diff = (fv - fi).abs().max().item<double>();
  return {diff <= 1e-6, "max |video - per-frame| = " + fmt("%.3g", diff) + " over " + std::to_string(n * t) + " frames"};
}

Outcome frozen_teacher(const fs::path& run_dir, const config::ExperimentConfig& cfg) {
  auto teacher = models::load_encoder(run_dir / seed_dir(cfg) / "step1" / "b.ckpt");
  const auto before = models::parameter_hash(*teacher);
  auto game = cfg.adversarial_config(cfg.seeds.front());
  game.batch_size = 8;
  auto state = training::make_adversarial_state(teacher, game);
  const auto ds = data::load_dataset(run_dir / "data");
  std::mt19937_64 order(1);
  int steps = 0;
  while (steps < 1000) {
    for (const auto& idx : data::make_batches(ds.train.size(), game.batch_size, &order)) {
      if (steps == 1000) break;
      training::adversarial_step(state, ds.train.gather(idx));
      ++steps;
    }
  }
  const auto after = models::parameter_hash(*teacher);
  const auto on_disk = models::parameter_hash(*models::load_encoder(run_dir / seed_dir(cfg) / "step1" / "b.ckpt"));
  const bool changed_h = models::parameter_hash(*state.hallucination) != before;
  return {before == after && after == on_disk && changed_h,
          std::to_string(steps) + " updates, hash " + std::to_string(before) + (before == after ? " == " : " != ") +
              std::to_string(after) + (changed_h ? ", hallucination moved" : ", hallucination did not move")};
}

Outcome gradient_oracle() {
  const auto r = evaluation::gradcheck_losses();
  const double worst = std::max({r.step1, r.discriminator, r.generator});
  return {worst <= 1e-4, "max rel err step1 " + fmt("%.2e", r.step1) + ", D term " + fmt("%.2e", r.discriminator) +
                             ", G term " + fmt("%.2e", r.generator)};
}

Outcome complementarity(const fs::path& run_dir, const config::ExperimentConfig& cfg) {
  const auto acc = seed_mean(run_dir, cfg, fs::path("eval") / "report.json").at("accuracy");
  const double a = acc.at("a"), b = acc.at("b"), fused = acc.at("two_stream");
  return {fused >= std::max(a, b) + 0.05,
          "overlap 0: A " + pct(a) + ", B " + pct(b) + ", two-stream " + pct(fused) + " (need >= " +
              pct(std::max(a, b) + 0.05) + ")" + seeds_note(cfg)};
}

Outcome recovery(const json& acc) {
  const double a = acc.at("a"), b = acc.at("b"), h = acc.at("hallucination"), admd = acc.at("admd");
  return {h >= b - 0.03 && admd >= a + 0.03,
          "H " + pct(h) + " vs teacher " + pct(b) + " - 3; A+H " + pct(admd) + " vs A " + pct(a) + " + 3"};
}

Outcome ensemble_ordering(const json& acc, const json& ens) {
  const double admd = acc.at("admd"), e = ens.at("ensemble_accuracy");
  return {admd - e >= 0.02, "A+H " + pct(admd) + " vs A+A ensemble " + pct(e) + " (need +2)"};
}

Outcome binary_collapse(const json& acc, const json& bin) {
  const double h = acc.at("hallucination"), hb = bin.at("hallucination_accuracy");
  const double d = bin.at("final_discriminator_accuracy");
  return {hb <= h - 0.15 && d >= 0.4 && d <= 0.6,
          "0/1 game H " + pct(hb) + " vs extended " + pct(h) + " (need -15); final D acc " + fmt("%.3f", d)};
}

Outcome bottleneck_order(const json& table, const config::ExperimentConfig& cfg) {
  const std::string small = "d=" + std::to_string(cfg.model.bottleneck_dim);
  const std::string wide = "d=" + std::to_string(cfg.model.feature_width);
  std::optional<double> hs, hw;
  for (const auto& row : table.at("rows")) {
    if (row.at("arm") == small) hs = row.at("hallucination_accuracy").get<double>();
    if (row.at("arm") == wide) hw = row.at("hallucination_accuracy").get<double>();
  }
  if (!hs || !hw) return {false, "ablation rows " + small + " / " + wide + " missing"};
  return {*hw < *hs, wide + " H " + pct(*hw) + " vs " + small + " H " + pct(*hs)};
}

Outcome noise_sweep(const json& j, const config::ExperimentConfig& cfg) {
  auto sweep = evaluation::SweepResult::from_json(j);
  sweep.switch_point = evaluation::detect_switch_point(sweep, cfg.evaluation.threshold, cfg.evaluation.margin);
  const auto& p = sweep.points;
  bool acc_ok = true, fake_ok = true, crossing = false;
  for (std::size_t i = 1; i < p.size(); ++i) {
    acc_ok = acc_ok && p[i].two_stream_accuracy <= p[i - 1].two_stream_accuracy + 0.01;
    fake_ok = fake_ok && p[i].fake_probability >= p[i - 1].fake_probability - 0.01;
  }
  for (const auto& q : p) crossing = crossing || q.admd_fused_accuracy > q.two_stream_accuracy;
  const auto sp = sweep.switch_point;
  const auto drop = evaluation::first_accuracy_drop(sweep, 0.10);
  auto index = [&](double v) {
    return std::distance(p.begin(), std::find_if(p.begin(), p.end(), [v](const auto& q) { return q.variance == v; }));
  };
  const bool near = sp && drop && std::abs(index(*sp) - index(*drop)) <= 1;
  std::string accs, fakes;
  for (const auto& q : p) {
    accs += (accs.empty() ? "" : "/") + pct(q.two_stream_accuracy);
    fakes += (fakes.empty() ? "" : "/") + fmt("%.2f", q.fake_probability);
  }
  return {acc_ok && fake_ok && crossing && near,
          "two-stream " + accs + (acc_ok ? "" : " (rises)") + "; p_fake " + fakes + (fake_ok ? "" : " (falls)") +
              (crossing ? "; crossing found" : "; no crossing") + "; switch " +
              (sp ? fmt("%g", *sp) : std::string("none")) + " vs 10-pt drop " +
              (drop ? fmt("%g", *drop) : std::string("none"))};
}

Outcome moddrop_order(const json& md) {
  const double blank = md.at("accuracy_blank_b"), plain_blank = md.at("two_stream_accuracy_blank_b");
  const double intact = md.at("accuracy"), plain = md.at("two_stream_accuracy");
  return {blank - plain_blank >= 0.02 && std::abs(intact - plain) <= 0.02,
          "blank B: moddrop " + pct(blank) + " vs plain " + pct(plain_blank) + "; intact: " + pct(intact) + " vs " +
              pct(plain)};
}

Outcome determinism(const fs::path& root) {
  const auto cfg = config::parse_config(source("configs/tiny.yaml"));
  std::vector<fs::path> dirs;
  for (const char* name : {"determinism-1", "determinism-2"}) {
    fs::remove_all(root / name);
    dirs.push_back(pipeline::run_pipeline(cfg, pipeline::all_stages(), options(root / name)).run_dir);
  }
  int compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
    if (entry.path().extension() != ".jsonl") continue;
    const auto other = dirs[1] / fs::relative(entry.path(), dirs[0]);
    ++compared;
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) ++differing;
  }
  return {compared > 0 && differing == 0,
          std::to_string(compared) + " metric logs compared, " + std::to_string(differing) + " differ"};
}

Outcome euclidean_spread(const json& eu) {
  double lo = 1.0, hi = 0.0;
  std::string parts;
  for (const auto& w : eu.at("weights")) {
    const double h = w.at("hallucination_accuracy");
    lo = std::min(lo, h);
    hi = std::max(hi, h);
    parts += (parts.empty() ? "" : ", ") + fmt("w=%g", w.at("class_weight").get<double>()) + " H " + pct(h);
  }
  return {hi - lo >= 0.03, parts + "; spread " + pct(hi - lo) + " points"};
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path(ADMD_ACCEPTANCE_ROOT);
  fs::create_directories(root);

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  const auto main_cfg = config::parse_config(source("configs/acceptance.yaml"));
  const auto disjoint_cfg = config::parse_config(source("configs/acceptance-disjoint.yaml"));
  fs::path main_dir, disjoint_dir;
  auto main_run = [&]() -> const fs::path& {
    if (main_dir.empty()) {
      std::cerr << "running pipeline for configs/acceptance.yaml\n";
      main_dir = pipeline::run_pipeline(main_cfg, pipeline::all_stages(), options(root)).run_dir;
    }
    return main_dir;
  };
  auto eval_acc = [&] { return seed_mean(main_run(), main_cfg, fs::path("eval") / "report.json").at("accuracy"); };
  auto baseline = [&](const std::string& kind) {
    return seed_mean(main_run(), main_cfg, fs::path("baselines") / kind / "result.json");
  };
  auto noted = [&](Outcome o) {
    o.detail += seeds_note(main_cfg);
    return o;
  };

  criteria.emplace_back("temporal identity init", [&] { return temporal_identity(main_cfg); });
  criteria.emplace_back("frozen teacher", [&] { return frozen_teacher(main_run(), main_cfg); });
  criteria.emplace_back("gradient oracle", [] { return gradient_oracle(); });
  criteria.emplace_back("complementarity", [&] {
    if (disjoint_dir.empty()) {
      std::cerr << "running pipeline for configs/acceptance-disjoint.yaml\n";
      disjoint_dir = pipeline::run_pipeline(disjoint_cfg, pipeline::parse_stages("data,step1,step2,eval"),
                                            options(root))
                         .run_dir;
    }
    return complementarity(disjoint_dir, disjoint_cfg);
  });
  criteria.emplace_back("hallucination recovery", [&] { return noted(recovery(eval_acc())); });
  criteria.emplace_back("ensemble ordering",
                        [&] { return noted(ensemble_ordering(eval_acc(), baseline("rgb-ensemble"))); });
  criteria.emplace_back("naive binary collapse",
                        [&] { return noted(binary_collapse(eval_acc(), baseline("naive-binary-gan"))); });
  criteria.emplace_back("bottleneck size ordering", [&] {
    return noted(bottleneck_order(seed_mean(main_run(), main_cfg, fs::path("ablate") / "bottleneck-size.json"),
                                  main_cfg));
  });
  criteria.emplace_back("noise sweep", [&] {
    return noted(noise_sweep(seed_mean(main_run(), main_cfg, fs::path("sweep") / "sweep.json"), main_cfg));
  });
  criteria.emplace_back("moddrop robustness", [&] { return noted(moddrop_order(baseline("moddrop"))); });
  criteria.emplace_back("determinism", [&] { return determinism(root); });
  criteria.emplace_back("euclidean weight sensitivity",
                        [&] { return noted(euclidean_spread(baseline("euclidean-hallucination"))); });

  std::vector<std::string> lines;
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    char head[96];
    std::snprintf(head, sizeof head, "%s criterion %2zu  %-30s", o.pass ? "PASS" : "FAIL", i + 1,
                  criteria[i].first.c_str());
    lines.push_back(std::string(head) + " " + o.detail);
    std::cout << lines.back() << std::endl;
  }
  std::ofstream(root / "acceptance.txt") << [&] {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
  }();
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
