#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "admd/config.hpp"
#include "admd/errors.hpp"

using namespace admd;

namespace {

// Reference FNV-1a, written out independently of the library.
std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool mentions(const ConfigError& e, const std::string& needle) {
  const auto& p = e.problems();
  return std::any_of(p.begin(), p.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; }) ||
         std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  auto c = config::parse_config_text("");
  EXPECT_EQ(c, config::ExperimentConfig{});
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.step2.generator.beta1, 0.0);
  EXPECT_EQ(c.model.bottleneck_dim, 128);
}

TEST(Config, SerializeRoundTrips) {
  config::ExperimentConfig c;
  c.seeds = {3, 4};
  c.model.bottleneck = models::BottleneckVariant::OneConv;
  c.model.widths = {8, 16, 32};
  c.step2.task = training::DiscriminatorTask::Binary;
  c.step2.generator.learning_rate = 2e-4;
  c.dataset.synthetic.overlap = 0.25;
  c.baselines.kinds = {baselines::Kind::ModDrop};
  c.evaluation.sweep = {0.0, 0.5};
  c.evaluation.ablations = {evaluation::AblationSuite::DiscriminatorTask};
  EXPECT_EQ(config::parse_config_text(config::serialize(c)), c);
}

TEST(Config, NonPositiveBottleneckDimIsRejected) {
  try {
    config::parse_config_text("model:\n  bottleneck_dim: 0\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "bottleneck dimension must be positive")) << e.what();
  }
}

TEST(Config, UnknownKeyNamesKeyAndSection) {
  try {
    config::parse_config_text("model:\n  bottleneck_size: 64\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "unknown key 'bottleneck_size' in section 'model'")) << e.what();
  }
}

TEST(Config, EveryProblemIsReported) {
  try {
    config::parse_config_text(
        "model:\n  bottleneck_dim: -1\n  colour: red\n"
        "training:\n  step1:\n    batch_size: 0\n  step2:\n    task: regression\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_GE(e.problems().size(), 3u) << e.what();
    EXPECT_TRUE(mentions(e, "colour"));
    EXPECT_TRUE(mentions(e, "regression"));
  }
}

TEST(Config, TypeErrorsAreReported) {
  EXPECT_THROW(config::parse_config_text("training:\n  step2:\n    steps: many\n"), ConfigError);
  EXPECT_THROW(config::parse_config_text("- a\n- b\n"), ConfigError);
  EXPECT_THROW(config::parse_config_text("model: [1, 2\n"), ConfigError);
}

TEST(Config, HashIsFnvOfCanonicalJson) {
  config::ExperimentConfig c;
  EXPECT_EQ(config::config_hash(c), fnv_hex(config::canonical_json(c).dump()));
  c.seeds = {9};
  EXPECT_EQ(config::config_hash(c), fnv_hex(config::canonical_json(c).dump()));
}

TEST(Config, DefaultHashIsStable) {
  EXPECT_EQ(config::config_hash(config::ExperimentConfig{}), "801c558e18ba773c");
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  config::ExperimentConfig a, b;
  b.output_dir = "/elsewhere";
  EXPECT_EQ(config::config_hash(a), config::config_hash(b));
  b.step2.steps += 1;
  EXPECT_NE(config::config_hash(a), config::config_hash(b));
  b = a;
  b.dataset.synthetic.seed += 1;
  EXPECT_NE(config::config_hash(a), config::config_hash(b));
}

TEST(Config, EncoderTakesSizesFromDataset) {
  config::ExperimentConfig c;
  auto e = c.encoder(7, 3, 24);
  EXPECT_EQ(e.num_classes, 7);
  EXPECT_EQ(e.frames, 3);
  EXPECT_EQ(e.image_size, 24);
  EXPECT_EQ(e.bottleneck_dim, c.model.bottleneck_dim);
}

TEST(Config, ShippedConfigsParse) {
  const std::filesystem::path dir = std::filesystem::path(ADMD_SOURCE_DIR) / "configs";
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".yaml") continue;
    EXPECT_NO_THROW(config::parse_config(entry.path()).validate()) << entry.path();
    ++seen;
  }
  EXPECT_GT(seen, 0);
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW(config::parse_config("/nonexistent/admd.yaml"), ConfigError);
}
