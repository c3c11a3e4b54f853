#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "admd/config.hpp"
#include "admd/errors.hpp"
#include "admd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace admd;
using pipeline::Stage;

namespace {

config::ExperimentConfig tiny(std::vector<std::uint64_t> seeds = {0}) {
  auto c = config::parse_config(fs::path(ADMD_SOURCE_DIR) / "configs" / "tiny.yaml");
  c.seeds = std::move(seeds);
  c.evaluation.ablations = {evaluation::AblationSuite::BottleneckSize};
  return c;
}

fs::path fresh_root(const std::string& name) {
  auto root = fs::temp_directory_path() / ("admd_pipeline_" + name);
  fs::remove_all(root);
  fs::create_directories(root);
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

pipeline::RunOptions quiet(const fs::path& root) {
  pipeline::RunOptions o;
  o.output_root = root;
  return o;
}

}  // namespace

TEST(Stages, ParseInPipelineOrder) {
  auto s = pipeline::parse_stages("report,step1,data");
  EXPECT_EQ(s, (std::vector<Stage>{Stage::Data, Stage::Step1, Stage::Report}));
  EXPECT_EQ(pipeline::parse_stages("all"), pipeline::all_stages());
  EXPECT_THROW(pipeline::parse_stages("step3"), ConfigError);
  for (auto st : pipeline::all_stages()) EXPECT_EQ(pipeline::stage_from_string(pipeline::to_string(st)), st);
}

TEST(Pipeline, MissingPriorStageIsADependencyError) {
  const auto root = fresh_root("dependency");
  try {
    pipeline::run_pipeline(tiny(), {Stage::Step1}, quiet(root));
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("requires stage data"), std::string::npos) << e.what();
  }
  pipeline::run_pipeline(tiny(), {Stage::Data}, quiet(root));
  try {
    pipeline::run_pipeline(tiny(), {Stage::Step2}, quiet(root));
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("requires stage step1"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, ReportWithoutEvaluationIsAReportError) {
  const auto root = fresh_root("empty");
  EXPECT_THROW(pipeline::emit_report(root), ReportError);
  EXPECT_THROW(pipeline::emit_report(root / "nothing"), ReportError);
}

TEST(Pipeline, OutputRootComesFromOptionsThenEnvironment) {
  auto c = tiny();
  c.output_dir = "from-config";
  pipeline::RunOptions o;
  ::unsetenv(pipeline::kOutputRootVariable);
  EXPECT_EQ(pipeline::output_root(c, o), fs::path("from-config"));
  ::setenv(pipeline::kOutputRootVariable, "/from/env", 1);
  EXPECT_EQ(pipeline::output_root(c, o), fs::path("/from/env"));
  o.output_root = "/from/options";
  EXPECT_EQ(pipeline::output_root(c, o), fs::path("/from/options"));
  ::unsetenv(pipeline::kOutputRootVariable);
  EXPECT_EQ(pipeline::run_directory(c, o), fs::path("/from/options") / config::config_hash(c));
}

class FullRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fresh_root("full"));
    manifest_ = new pipeline::ArtifactManifest(
        pipeline::run_pipeline(tiny({3, 4}), pipeline::all_stages(), quiet(*root_)));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete root_;
  }
  static fs::path* root_;
  static pipeline::ArtifactManifest* manifest_;
};

fs::path* FullRun::root_ = nullptr;
pipeline::ArtifactManifest* FullRun::manifest_ = nullptr;

TEST_F(FullRun, ManifestListsEveryKind) {
  for (const char* kind : {"dataset", "checkpoint", "hallucination", "discriminator", "log", "eval_report",
                           "baseline_result", "sweep", "ablation", "report", "summary", "plot"}) {
    EXPECT_FALSE(manifest_->of_kind(kind).empty()) << kind;
  }
  for (const auto& a : manifest_->artifacts) EXPECT_TRUE(fs::exists(manifest_->run_dir / a.path)) << a.path;
  EXPECT_EQ(manifest_->run_dir, *root_ / config::config_hash(tiny({3, 4})));
  const auto on_disk = pipeline::read_manifest(manifest_->run_dir);
  EXPECT_EQ(on_disk.to_json(), manifest_->to_json());
}

TEST_F(FullRun, EveryArtifactCarriesTheConfigHash) {
  for (const auto& a : manifest_->artifacts) {
    EXPECT_NE(slurp(manifest_->run_dir / a.path).find(manifest_->config_hash), std::string::npos) << a.path;
  }
}

TEST_F(FullRun, ReportHasPerSeedColumnsAndMean) {
  const auto md = slurp(manifest_->run_dir / "report" / "report.md");
  EXPECT_NE(md.find("| seed-3 | seed-4 | mean |"), std::string::npos) << md.substr(0, 400);
  EXPECT_NE(md.find("ADMD (A + H)"), std::string::npos);
  EXPECT_NE(md.find("## Bottleneck size"), std::string::npos);
  const auto svg = slurp(manifest_->run_dir / "report" / "sweep.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
}

TEST_F(FullRun, RerunOnlyRendersTheReport) {
  const auto before = slurp(manifest_->run_dir / "manifest.json");
  auto again = pipeline::run_pipeline(tiny({3, 4}), pipeline::all_stages(), quiet(*root_));
  EXPECT_EQ(again.executed, (std::vector<std::string>{"report"}));
  EXPECT_EQ(slurp(manifest_->run_dir / "manifest.json"), before);
}

TEST_F(FullRun, ChangedConfigGetsItsOwnDirectory) {
  auto c = tiny({3, 4});
  c.step2.steps += 1;
  EXPECT_NE(pipeline::run_directory(c, quiet(*root_)), manifest_->run_dir);
}
