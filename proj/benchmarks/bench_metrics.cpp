#include <benchmark/benchmark.h>

#include "exposura/imaging.hpp"
#include "exposura/metrics.hpp"

namespace {

using namespace exposura;

void BM_Ssim(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = synthesize_scene(n, n, 1), b = synthesize_scene(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Psnr(benchmark::State& state) {
  const auto a = synthesize_scene(512, 512, 1), b = synthesize_scene(512, 512, 2);
  for (auto _ : state) benchmark::DoNotOptimize(psnr(a, b));
}
BENCHMARK(BM_Psnr);

void BM_Niqe(benchmark::State& state) {
  std::vector<ImageBuffer> corpus;
  for (int i = 0; i < 4; ++i) corpus.push_back(synthesize_scene(288, 288, 10 + static_cast<std::uint64_t>(i)));
  const auto model = fit_pristine(corpus);
  const int n = static_cast<int>(state.range(0));
  const auto img = synthesize_scene(n, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(niqe(img, model));
}
BENCHMARK(BM_Niqe)->Arg(384)->Arg(768)->Unit(benchmark::kMillisecond);

void BM_EvShift(benchmark::State& state) {
  const auto img = synthesize_scene(512, 512, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ev_shift(img, 1.5));
}
BENCHMARK(BM_EvShift)->Unit(benchmark::kMillisecond);

}  // namespace
