#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/models.hpp"
#include "admd/rng.hpp"

namespace fs = std::filesystem;
using namespace admd;
using models::BottleneckVariant;

namespace {

models::EncoderConfig small(int frames = 5, BottleneckVariant v = BottleneckVariant::PoolConv, int d = 16) {
  models::EncoderConfig c;
  c.num_classes = 4;
  c.frames = frames;
  c.image_size = 16;
  c.widths = {8, 16, 16};
  c.feature_width = 64;
  c.bottleneck = v;
  c.bottleneck_dim = d;
  return c;
}

torch::Tensor clips(std::int64_t b, std::int64_t t, std::int64_t s, std::uint64_t seed = 1) {
  auto g = make_torch_generator(seed);
  return torch::rand({b, t, s, s, 3}, g);
}

}  // namespace

TEST(Encoder, SingleImageModeHasNoTemporalKernels) {
  auto enc = models::build_encoder(small(1), 3);
  EXPECT_TRUE(enc->temporal_layers().empty());
  auto video = models::build_encoder(small(5), 3);
  EXPECT_EQ(video->temporal_layers().size(), 3u);  // one per stage
}

TEST(Encoder, FeatureDimensionIsBottleneckDim) {
  auto enc = models::build_encoder(small(5, BottleneckVariant::PoolConv, 128), 3);
  auto out = enc->forward(clips(2, 5, 16));
  EXPECT_EQ(out.features.sizes(), (torch::IntArrayRef{2, 5, 128}));
  EXPECT_EQ(out.logits.sizes(), (torch::IntArrayRef{2, 4}));
}

TEST(Encoder, NoBottleneckKeepsBackboneWidth) {
  auto cfg = small(5, BottleneckVariant::None, 2048);
  cfg.feature_width = 2048;
  auto enc = models::build_encoder(cfg, 3);
  EXPECT_EQ(cfg.feature_dim(), 2048);
  EXPECT_EQ(enc->features(clips(1, 5, 16)).size(2), 2048);
}

TEST(Encoder, EveryVariantExceptNoneOutputsD) {
  for (auto v : {BottleneckVariant::OneConv, BottleneckVariant::SpatialConvThen1d, BottleneckVariant::PoolConv,
                 BottleneckVariant::FcAfterPool}) {
    auto enc = models::build_encoder(small(3, v, 24), 5);
    EXPECT_EQ(enc->features(clips(2, 3, 16)).size(2), 24) << models::to_string(v);
  }
}

TEST(Encoder, UnknownVariantIsAConfigError) {
  EXPECT_THROW(models::bottleneck_from_string("pool+fc"), ConfigError);
  EXPECT_THROW(models::discriminator_from_string("deep"), ConfigError);
}

TEST(Encoder, VideoForwardEqualsPerFrameForwardAtInit) {
  auto video = models::build_encoder(small(5), 21);
  auto image = models::build_encoder(small(1), 21);
  auto x = clips(3, 5, 16);
  torch::NoGradGuard no_grad;
  auto fv = video->features(x);
  auto fi = image->features(x.reshape({15, 1, 16, 16, 3})).reshape({3, 5, -1});
  EXPECT_LE((fv - fi).abs().max().item<double>(), 1e-6);
}

TEST(Encoder, ForwardIsDeterministic) {
  auto enc = models::build_encoder(small(), 2);
  auto x = clips(2, 5, 16);
  torch::NoGradGuard no_grad;
  EXPECT_TRUE(torch::equal(enc->forward(x).logits, enc->forward(x).logits));
  auto again = models::build_encoder(small(), 2);
  EXPECT_TRUE(torch::equal(enc->forward(x).logits, again->forward(x).logits));
}

TEST(Encoder, WrongFrameCountIsAShapeError) {
  auto enc = models::build_encoder(small(5), 2);
  EXPECT_THROW(enc->forward(clips(1, 4, 16)), ShapeError);
}

// --- temporal kernels -------------------------------------------------------------------

TEST(TemporalConv, FreshLayerIsIdentity) {
  models::TemporalConv layer(6);
  auto x = torch::randn({4 * 5, 6, 3, 3});
  EXPECT_LE((layer->forward(x, 5) - x).abs().max().item<double>(), 1e-6);
}

TEST(TemporalConv, CentreSliceIsIdentityMatrix) {
  models::TemporalConv layer(7);
  auto w = layer->weight.squeeze(-1).squeeze(-1);  // [C, C, 3]
  EXPECT_TRUE(torch::equal(w.select(2, 1), torch::eye(7, w.options())));
  EXPECT_TRUE(torch::equal(w.select(2, 0), torch::zeros({7, 7}, w.options())));
  EXPECT_TRUE(torch::equal(w.select(2, 2), torch::zeros({7, 7}, w.options())));
}

TEST(TemporalConv, GradientStepMovesKernel) {
  auto enc = models::build_encoder(small(5), 4);
  auto layers = enc->temporal_layers();
  const auto before = layers[0]->weight.detach().clone();
  torch::optim::SGD opt(enc->parameters(), 0.1);
  auto out = enc->forward(clips(2, 5, 16, 9));
  auto loss = torch::nn::functional::cross_entropy(out.logits, torch::tensor({0, 3}));
  loss.backward();
  opt.step();
  EXPECT_GT((layers[0]->weight.detach() - before).abs().max().item<double>(), 0.0);
}

TEST(TemporalConv, ResetRestoresIdentity) {
  auto enc = models::build_encoder(small(5), 4);
  {
    torch::NoGradGuard no_grad;
    for (auto& l : enc->temporal_layers()) l->weight.add_(0.3);
  }
  models::init_temporal_identity(*enc);
  for (auto& l : enc->temporal_layers()) {
    EXPECT_TRUE(torch::equal(l->weight.squeeze(-1).squeeze(-1).select(2, 1), torch::eye(l->weight.size(0))));
  }
}

// --- bottleneck -------------------------------------------------------------------------

TEST(Bottleneck, PoolConvOnFullSizeMap) {
  auto b = models::build_bottleneck(BottleneckVariant::PoolConv, 2048, 7, 128);
  EXPECT_EQ(b->forward(torch::randn({2, 2048, 7, 7})).sizes(), (torch::IntArrayRef{2, 128}));
}

TEST(Bottleneck, OneConvCoversFullExtent) {
  auto b = models::build_bottleneck(BottleneckVariant::OneConv, 64, 7, 128);
  EXPECT_EQ(b->forward(torch::randn({3, 64, 7, 7})).sizes(), (torch::IntArrayRef{3, 128}));
  EXPECT_EQ(b->output_dim(), 128);
}

TEST(Bottleneck, NonePassesPooledVectorThrough) {
  auto b = models::build_bottleneck(BottleneckVariant::None, 32, 4, 128);
  auto map = torch::randn({2, 32, 4, 4});
  EXPECT_TRUE(torch::allclose(b->forward(map), map.mean({2, 3})));
  EXPECT_EQ(b->output_dim(), 32);
}

// --- discriminator ----------------------------------------------------------------------

TEST(Discriminator, InputAndOutputDimensions) {
  models::DiscriminatorConfig c;
  c.feature_dim = 128;
  c.conditioning_dim = 5;
  c.num_outputs = 11;
  auto d = models::build_discriminator(c, 1);
  EXPECT_EQ(c.input_dim(), 133);
  auto logits = models::discriminator_forward(*d, torch::randn({6, 128}), torch::eye(5).repeat({2, 1}).slice(0, 0, 6));
  EXPECT_EQ(logits.sizes(), (torch::IntArrayRef{6, 11}));

  c.conditioning_dim = 0;
  auto unconditioned = models::build_discriminator(c, 1);
  EXPECT_EQ(c.input_dim(), 128);
  EXPECT_EQ(models::discriminator_forward(*unconditioned, torch::randn({2, 128}), std::nullopt).size(1), 11);
}

TEST(Discriminator, ConcatenationOrderIsFeaturesThenOneHot) {
  models::DiscriminatorConfig c;
  c.feature_dim = 3;
  c.conditioning_dim = 2;
  c.num_outputs = 3;
  auto d = models::build_discriminator(c, 1);
  auto f = torch::randn({2, 3});
  auto y = torch::eye(2);
  torch::NoGradGuard no_grad;
  EXPECT_TRUE(torch::equal(models::discriminator_forward(*d, f, y), d->forward(torch::cat({f, y}, 1))));
}

TEST(Discriminator, ZeroParametersGiveUniformCrossEntropy) {
  for (int classes : {1, 4, 10}) {
    models::DiscriminatorConfig c;
    c.feature_dim = 8;
    c.conditioning_dim = 3;
    c.num_outputs = classes + 1;
    auto d = models::build_discriminator(c, 1);
    {
      torch::NoGradGuard no_grad;
      for (auto& p : d->parameters()) p.zero_();
    }
    auto logits = models::discriminator_forward(*d, torch::randn({4, 8}), torch::eye(3).slice(0, 0, 1).repeat({4, 1}));
    auto ce = torch::nn::functional::cross_entropy(logits, torch::full({4}, classes, torch::kInt64));
    EXPECT_NEAR(ce.item<double>(), std::log(classes + 1.0), 1e-6);
  }
}

TEST(Discriminator, OutputIsCPlusOneForEveryVariantAndBatch) {
  for (auto v : {models::DiscriminatorVariant::Shallow, models::DiscriminatorVariant::DeepWithSkips}) {
    for (int classes : {1, 3, 7}) {
      models::DiscriminatorConfig c;
      c.variant = v;
      c.feature_dim = 16;
      c.conditioning_dim = 5;
      c.num_outputs = classes + 1;
      c.width_scale = 1.0 / 64;
      auto d = models::build_discriminator(c, 2);
      for (int batch : {1, 2, 9}) {
        auto onehot = torch::zeros({batch, 5});
        onehot.select(1, 0).fill_(1);
        EXPECT_EQ(models::discriminator_forward(*d, torch::randn({batch, 16}), onehot).sizes(),
                  (torch::IntArrayRef{batch, classes + 1}));
      }
    }
  }
}

TEST(Discriminator, HiddenWidthsScaleFromLiteralSizes) {
  models::DiscriminatorConfig c;
  c.width_scale = 1.0;
  EXPECT_EQ(c.hidden_widths(), (std::vector<int>{2048, 1024}));
  c.variant = models::DiscriminatorVariant::DeepWithSkips;
  EXPECT_EQ(c.hidden_widths(), (std::vector<int>{1024, 1024, 1024, 2048, 3072}));
  c.width_scale = 0.25;
  EXPECT_EQ(c.hidden_widths(), (std::vector<int>{256, 256, 256, 512, 768}));
}

TEST(Discriminator, DimensionMismatchNamesExpectedAndGot) {
  models::DiscriminatorConfig c;
  c.feature_dim = 8;
  c.conditioning_dim = 3;
  c.num_outputs = 4;
  auto d = models::build_discriminator(c, 1);
  try {
    models::discriminator_forward(*d, torch::randn({2, 9}), torch::eye(3).slice(0, 0, 2));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("8"), std::string::npos) << what;
    EXPECT_NE(what.find("9"), std::string::npos) << what;
  }
  EXPECT_THROW(models::discriminator_forward(*d, torch::randn({2, 8}), std::nullopt), ShapeError);
}

// --- checkpoints ------------------------------------------------------------------------

TEST(Checkpoint, EncoderRoundTripAndMismatch) {
  const auto dir = fs::temp_directory_path() / "admd_unit_ckpt";
  fs::create_directories(dir);
  auto enc = models::build_encoder(small(), 8);
  models::save_encoder(dir / "e.ckpt", *enc, "cafe");
  auto back = models::load_encoder(dir / "e.ckpt");
  EXPECT_EQ(back->config(), enc->config());
  EXPECT_EQ(models::parameter_hash(*back), models::parameter_hash(*enc));
  EXPECT_EQ(models::read_checkpoint_descriptor(dir / "e.ckpt").at("config_hash"), "cafe");

  auto other = models::build_encoder(small(5, BottleneckVariant::OneConv), 8);
  EXPECT_THROW(models::load_checkpoint(dir / "e.ckpt", *other, "encoder", other->config().to_json()),
               CheckpointError);
}

TEST(Checkpoint, DiscriminatorRoundTrip) {
  const auto dir = fs::temp_directory_path() / "admd_unit_ckpt";
  fs::create_directories(dir);
  models::DiscriminatorConfig c;
  c.feature_dim = 12;
  c.width_scale = 1.0 / 128;
  auto d = models::build_discriminator(c, 3);
  models::save_discriminator(dir / "d.ckpt", *d);
  auto back = models::load_discriminator(dir / "d.ckpt");
  EXPECT_EQ(back->config(), c);
  EXPECT_EQ(models::parameter_hash(*back), models::parameter_hash(*d));
}
