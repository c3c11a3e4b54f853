#include <cmath>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/evaluation.hpp"
#include "admd/models.hpp"
#include "admd/rng.hpp"
#include "admd/training.hpp"

using namespace admd;
using training::Source;

namespace {

data::SyntheticTaskSpec tiny_spec() {
  data::SyntheticTaskSpec s;
  s.num_classes = 3;
  s.samples_per_class = 12;
  s.image_size = 16;
  s.frames_per_clip = 3;
  s.overlap = 0.5;
  s.seed = 5;
  return s;
}

models::EncoderConfig tiny_encoder() {
  models::EncoderConfig c;
  c.num_classes = 3;
  c.frames = 3;
  c.image_size = 16;
  c.widths = {8, 8, 16};
  c.feature_width = 32;
  c.bottleneck_dim = 8;
  return c;
}

training::AdversarialConfig tiny_game() {
  training::AdversarialConfig g;
  g.generator.learning_rate = 1e-3;
  g.discriminator.learning_rate = 1e-3;
  g.discriminator_width_scale = 1.0 / 64;
  g.batch_size = 6;
  return g;
}

const data::Dataset& tiny_dataset() {
  static const data::Dataset d = data::generate_synthetic(tiny_spec());
  return d;
}

}  // namespace

// --- extended label ---------------------------------------------------------------------

TEST(ExtendedLabel, TeacherSampleKeepsClassAndZeroFakeSlot) {
  auto y = training::extend_label(2, 4, Source::Teacher);
  EXPECT_TRUE(torch::equal(y, torch::tensor({0.f, 0.f, 1.f, 0.f, 0.f})));
  EXPECT_EQ(training::extended_target(2, 4, Source::Teacher), 2);
}

TEST(ExtendedLabel, HallucinatedSampleIsFakeSlotOnly) {
  for (int c = 0; c < 4; ++c) {
    auto y = training::extend_label(c, 4, Source::Hallucinated);
    EXPECT_TRUE(torch::equal(y, torch::tensor({0.f, 0.f, 0.f, 0.f, 1.f})));
    EXPECT_EQ(training::extended_target(c, 4, Source::Hallucinated), 4);
  }
}

TEST(ExtendedLabel, OutOfRangeClassIsALabelError) {
  EXPECT_THROW(training::extend_label(4, 4, Source::Teacher), LabelError);
  EXPECT_THROW(training::extend_label(-1, 4, Source::Teacher), LabelError);
  EXPECT_THROW(training::extended_target(7, 4, Source::Hallucinated), LabelError);
}

TEST(ExtendedLabel, AlwaysOneHotOfLengthCPlusOne) {
  for (int classes = 1; classes <= 12; ++classes) {
    for (int c = 0; c < classes; ++c) {
      for (auto src : {Source::Teacher, Source::Hallucinated}) {
        auto y = training::extend_label(c, classes, src);
        ASSERT_EQ(y.numel(), classes + 1);
        EXPECT_EQ(y.sum().item<float>(), 1.f);
        EXPECT_EQ(y.argmax().item<std::int64_t>(), training::extended_target(c, classes, src));
      }
    }
  }
}

// --- losses -------------------------------------------------------------------------------

TEST(Losses, UniformDiscriminatorGivesLogCPlusOne) {
  models::DiscriminatorConfig c;
  c.feature_dim = 4;
  c.conditioning_dim = 2;
  c.num_outputs = 3;  // C = 2
  c.width_scale = 1.0 / 256;
  auto d = models::build_discriminator(c, 0);
  {
    torch::NoGradGuard no_grad;
    for (auto& p : d->parameters()) p.zero_();
  }
  auto fake = torch::randn({4, 4});
  auto real = torch::randn({4, 4});
  auto onehot = torch::eye(2).repeat({2, 1});
  auto labels = torch::tensor({0, 1}, torch::kInt64);
  auto terms = training::discriminator_terms(*d, fake, real, onehot, labels);
  EXPECT_NEAR(terms.fake_term.item<double>(), std::log(3.0), 1e-6);
  EXPECT_NEAR(terms.real_term.item<double>(), std::log(3.0), 1e-6);
  auto g = training::generator_loss(*d, fake, onehot, labels, training::GeneratorObjective::LabelFlip);
  EXPECT_NEAR(g.item<double>(), std::log(3.0), 1e-6);
}

TEST(Losses, FakeIndexDependsOnGame) {
  models::DiscriminatorConfig c;
  c.num_outputs = 11;
  EXPECT_EQ(training::fake_index(c), 10);
  auto game = tiny_game();
  game.task = training::DiscriminatorTask::Binary;
  auto binary = training::discriminator_config(game, tiny_encoder());
  EXPECT_EQ(binary.num_outputs, 2);
  EXPECT_EQ(training::fake_index(binary), 1);
  game.task = training::DiscriminatorTask::Extended;
  EXPECT_EQ(training::discriminator_config(game, tiny_encoder()).num_outputs, 4);
}

TEST(Losses, NonFiniteLossIsATrainingError) {
  auto logits = torch::tensor({{std::nanf(""), 0.f}});
  EXPECT_THROW(training::checked_cross_entropy(logits, torch::tensor({0}, torch::kInt64), "x"), TrainingError);
}

TEST(Losses, GradcheckFlagsAWrongGradient) {
  auto x = torch::randn({5}, torch::kFloat64).requires_grad_();
  EXPECT_LE(evaluation::gradcheck([&] { return (x.sin() * x).sum(); }, {x}), 1e-8);
  // the detached factor hides half of the true gradient from autograd
  EXPECT_NEAR(evaluation::gradcheck([&] { return (x * x.detach()).sum(); }, {x}), 0.5, 1e-6);
}

TEST(Losses, GradcheckOnToyModels) {
  const auto report = evaluation::gradcheck_losses();
  EXPECT_LE(report.step1, 1e-4);
  EXPECT_LE(report.discriminator, 1e-4);
  EXPECT_LE(report.generator, 1e-4);
  EXPECT_GT(report.encoder_parameters, 0);
  EXPECT_GT(report.discriminator_parameters, 0);
}

// --- adversarial step -------------------------------------------------------------------

TEST(Adversarial, HallucinationStartsAsTeacherCopy) {
  auto teacher = models::build_encoder(tiny_encoder(), 3);
  auto state = training::make_adversarial_state(teacher, tiny_game());
  EXPECT_EQ(models::parameter_hash(*state.hallucination), models::parameter_hash(*teacher));
  for (auto& p : state.hallucination->head_parameters()) EXPECT_FALSE(p.requires_grad());
  for (auto& p : teacher->parameters()) EXPECT_FALSE(p.requires_grad());

  auto batch = tiny_dataset().train.slice(0, 6);
  training::adversarial_step(state, batch);
  EXPECT_NE(models::parameter_hash(*state.hallucination), models::parameter_hash(*teacher));
}

TEST(Adversarial, TeacherNeverChangesAndLossesStayNonNegative) {
  auto teacher = models::build_encoder(tiny_encoder(), 3);
  const auto before = models::parameter_hash(*teacher);
  auto state = training::make_adversarial_state(teacher, tiny_game());
  const auto head_before = models::parameter_hash(*state.hallucination);
  const auto& train = tiny_dataset().train;
  for (int step = 0; step < 100; ++step) {
    const auto begin = (step * 6) % (train.size() - 6);
    auto losses = training::adversarial_step(state, train.slice(begin, begin + 6));
    ASSERT_GE(losses.discriminator_fake_term, 0.0);
    ASSERT_GE(losses.discriminator_real_term, 0.0);
    ASSERT_GE(losses.generator_loss, 0.0);
    ASSERT_NEAR(losses.discriminator_loss, losses.discriminator_fake_term + losses.discriminator_real_term, 1e-5);
    ASSERT_GE(losses.fake_probability, 0.0);
    ASSERT_LE(losses.fake_probability, 1.0);
  }
  EXPECT_EQ(models::parameter_hash(*teacher), before);
  EXPECT_EQ(state.step, 100);
  (void)head_before;
}

TEST(Adversarial, HeadStaysTheTeacherHead) {
  auto teacher = models::build_encoder(tiny_encoder(), 3);
  auto state = training::make_adversarial_state(teacher, tiny_game());
  for (int step = 0; step < 5; ++step) training::adversarial_step(state, tiny_dataset().train.slice(0, 6));
  const auto th = teacher->head_parameters();
  const auto hh = state.hallucination->head_parameters();
  ASSERT_EQ(th.size(), hh.size());
  for (std::size_t i = 0; i < th.size(); ++i) EXPECT_TRUE(torch::equal(th[i], hh[i]));
}

TEST(Adversarial, DiscriminatorInputsAreClipMajor) {
  auto batch = tiny_dataset().train.slice(0, 2);
  auto features = torch::arange(2 * 3 * 4, torch::kFloat32).reshape({2, 3, 4});
  auto [flat, onehot] = training::discriminator_inputs(features, batch, true);
  EXPECT_EQ(flat.sizes(), (torch::IntArrayRef{6, 4}));
  EXPECT_TRUE(torch::equal(flat[4], features[1][1]));
  ASSERT_TRUE(onehot.has_value());
  EXPECT_TRUE(torch::equal(*onehot, torch::eye(3).repeat({2, 1})));
  auto [_, none] = training::discriminator_inputs(features, batch, false);
  EXPECT_FALSE(none.has_value());
}

TEST(Adversarial, Step2RecordsTeacherHashes) {
  auto game = tiny_game();
  game.steps = 6;
  game.eval_every = 3;
  auto teacher = models::build_encoder(tiny_encoder(), 3);
  auto result = training::train_step2(teacher, tiny_dataset(), game);
  EXPECT_EQ(result.teacher_hash_before, result.teacher_hash_after);
  ASSERT_EQ(result.log.size(), 3u);  // before training, then every 3 steps
  EXPECT_EQ(result.log.back().at("step"), 6);
  EXPECT_GE(result.best_step, 0);
}

// --- fusion -------------------------------------------------------------------------------

TEST(Fusion, ElementwiseMeanOfLogits) {
  auto a = torch::tensor({{2.f, 0.f, -1.f}});
  auto b = torch::tensor({{0.f, 2.f, 1.f}});
  EXPECT_TRUE(torch::equal(training::fuse_logits(a, b), torch::tensor({{1.f, 1.f, 0.f}})));
  EXPECT_THROW(training::fuse_logits(a, torch::zeros({1, 4})), ShapeError);
}

TEST(Fusion, ArgmaxIgnoresPerRowShifts) {
  auto g = make_torch_generator(4);
  auto a = torch::randn({64, 5}, g);
  auto b = torch::randn({64, 5}, g);
  auto shift = torch::randn({64, 1}, g) * 10;
  EXPECT_TRUE(torch::equal(training::fuse_logits(a, b).argmax(1), training::fuse_logits(a + shift, b).argmax(1)));
}

// --- Step 1 -------------------------------------------------------------------------------

TEST(Step1, ZeroEpochsLeavesEncoderUnchanged) {
  auto enc = models::build_encoder(tiny_encoder(), 9);
  training::Step1Config cfg;
  cfg.epochs = 0;
  auto result = training::train_step1(enc, tiny_dataset(), data::Modality::B, cfg);
  EXPECT_EQ(models::parameter_hash(*result.encoder), models::parameter_hash(*enc));
  EXPECT_TRUE(result.log.empty());
}

TEST(Step1, DeterministicAndLeavesArgumentUntouched) {
  training::Step1Config cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.optimizer.learning_rate = 1e-3;
  auto enc = models::build_encoder(tiny_encoder(), 9);
  const auto initial = models::parameter_hash(*enc);
  auto r1 = training::train_step1(enc, tiny_dataset(), data::Modality::A, cfg);
  auto r2 = training::train_step1(models::build_encoder(tiny_encoder(), 9), tiny_dataset(), data::Modality::A, cfg);
  EXPECT_EQ(models::parameter_hash(*enc), initial);
  EXPECT_EQ(models::parameter_hash(*r1.encoder), models::parameter_hash(*r2.encoder));
  ASSERT_EQ(r1.log.size(), 2u);
  EXPECT_EQ(r1.log, r2.log);
}

TEST(Step1, ClassCountMismatchIsAConfigError) {
  auto cfg = tiny_encoder();
  cfg.num_classes = 5;
  EXPECT_THROW(training::train_step1(models::build_encoder(cfg, 1), tiny_dataset(), data::Modality::A, {}),
               ConfigError);
}

TEST(Step1, LearnsAnEasyTask) {
  auto spec = tiny_spec();
  spec.num_classes = 2;
  spec.samples_per_class = 60;
  spec.modality_b_informativeness = 1.0;
  const auto ds = data::generate_synthetic(spec);
  auto cfg_enc = tiny_encoder();
  cfg_enc.num_classes = 2;
  training::Step1Config cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.optimizer.learning_rate = 1e-3;
  auto result = training::train_step1(models::build_encoder(cfg_enc, 2), ds, data::Modality::B, cfg);
  EXPECT_LT(result.log.back().at("train_loss").get<double>(), result.log.front().at("train_loss").get<double>());
  const double acc = evaluation::split_accuracy(evaluation::stream_logits(result.encoder, data::Modality::B), ds.test);
  EXPECT_GE(acc, 0.75);
}

TEST(Optimizer, UnknownKindIsAConfigError) {
  training::OptimizerConfig c;
  c.kind = "lbfgs";
  EXPECT_THROW(training::make_optimizer({torch::zeros({1}, torch::requires_grad())}, c), ConfigError);
}
