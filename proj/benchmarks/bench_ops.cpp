#include <benchmark/benchmark.h>

#include <random>

#include "exposura/losses.hpp"
#include "exposura/network.hpp"
#include "exposura/ops.hpp"
#include "exposura/trainer.hpp"

namespace {

using namespace exposura;

Tensor<float> noise(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  Tensor<float> t(std::move(s));
  for (float& v : t.mutable_data()) v = d(rng);
  return t;
}

// args: channels, extent
void BM_Conv2d(benchmark::State& state, ConvPath path) {
  const auto c = state.range(0), n = state.range(1);
  const auto x = noise(Shape{1, c, n, n}, 1);
  const auto w = noise(Shape{2 * c, c, 4, 4}, 2);
  const auto b = noise(Shape{2 * c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 2, 1, path));
  state.SetItemsProcessed(state.iterations() * 2 * c * c * 16 * (n / 2) * (n / 2));
}
BENCHMARK_CAPTURE(BM_Conv2d, im2col, ConvPath::kIm2col)->Args({16, 64})->Args({64, 64})->Args({128, 32});
BENCHMARK_CAPTURE(BM_Conv2d, direct, ConvPath::kDirect)->Args({16, 64})->Args({64, 64})->Args({128, 32});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = state.range(0), n = state.range(1);
  const auto x = noise(Shape{1, c, n, n}, 1);
  const auto w = noise(Shape{2 * c, c, 4, 4}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    auto xw = tape.watch(x);
    auto ww = tape.watch(w);
    benchmark::DoNotOptimize(tape.backward(sq_mean(conv2d(xw, ww, Tensor<float>(), 2, 1))));
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({64, 64});

void BM_GeneratorForward(benchmark::State& state) {
  GeneratorConfig cfg;
  const auto w = init_generator(cfg, 1);
  const auto x = noise(Shape{1, 3, state.range(0), state.range(0)}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(generator_forward(x, w, cfg).image);
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_DiscriminatorForward(benchmark::State& state) {
  DiscriminatorConfig cfg;
  const auto w = init_discriminator(cfg, 1);
  auto sn = init_spectral_states(w, 1);
  DiscriminatorOptions opts{&sn};
  const auto x = noise(Shape{1, 3, state.range(0), state.range(0)}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(discriminator_forward(x, w, cfg, opts));
}
BENCHMARK(BM_DiscriminatorForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.crop_size = static_cast<int>(state.range(0));
  auto st = TrainState::initialize(cfg);
  const auto ex = make_feature_extractor(cfg);
  std::vector<TrainingPair> data{{synthesize_scene(cfg.crop_size, cfg.crop_size, 1),
                                  synthesize_scene(cfg.crop_size, cfg.crop_size, 2)}};
  for (auto _ : state) benchmark::DoNotOptimize(train_step(st, sample_batch(data, cfg, st.step), cfg, ex));
}
BENCHMARK(BM_TrainStep)->Arg(64)->Unit(benchmark::kMillisecond)->Iterations(5);

}  // namespace
