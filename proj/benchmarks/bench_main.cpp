#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "admd/data.hpp"
#include "admd/models.hpp"
#include "admd/rng.hpp"
#include "admd/training.hpp"

using namespace admd;

namespace {

models::EncoderConfig encoder_config(int frames) {
  models::EncoderConfig c;
  c.num_classes = 4;
  c.frames = frames;
  c.image_size = 32;
  c.width_multiplier = 0.25;
  return c;
}

}  // namespace

static void BM_EncoderForward(benchmark::State& state) {
  torch::set_num_threads(1);
  const int frames = static_cast<int>(state.range(0));
  auto enc = models::build_encoder(encoder_config(frames), 0);
  enc->eval();
  auto x = torch::rand({8, frames, 32, 32, 3}, make_torch_generator(1));
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(enc->forward(x).logits);
  state.SetItemsProcessed(state.iterations() * 8 * frames);
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

static void BM_AdversarialStep(benchmark::State& state) {
  torch::set_num_threads(1);
  data::SyntheticTaskSpec spec;
  spec.samples_per_class = 16;
  const auto ds = data::generate_synthetic(spec);
  training::AdversarialConfig game;
  game.batch_size = static_cast<int>(state.range(0));
  auto state_ = training::make_adversarial_state(models::build_encoder(encoder_config(5), 0), game);
  auto batch = ds.train.slice(0, game.batch_size);
  for (auto _ : state) benchmark::DoNotOptimize(training::adversarial_step(state_, batch));
}
BENCHMARK(BM_AdversarialStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Speckle(benchmark::State& state) {
  auto x = torch::rand({64, 5, 32, 32, 3}, make_torch_generator(2));
  for (auto _ : state) benchmark::DoNotOptimize(data::speckle_noise(x, {0.1, 7}));
  state.SetBytesProcessed(state.iterations() * x.numel() * 4);
}
BENCHMARK(BM_Speckle);

static void BM_JetEncode(benchmark::State& state) {
  auto depth = torch::rand({5, 64, 64}, make_torch_generator(3));
  for (auto _ : state) benchmark::DoNotOptimize(data::encode_depth_jet(depth));
}
BENCHMARK(BM_JetEncode);

BENCHMARK_MAIN();
