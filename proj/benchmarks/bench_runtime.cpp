#include <random>

#include <benchmark/benchmark.h>

#include "splitwire/quantization.hpp"
#include "splitwire/split_runtime.hpp"

namespace {

void BM_Quantize(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-6.0, 6.0);
  std::vector<double> values(static_cast<std::size_t>(state.range(0)));
  for (auto& v : values) v = dist(rng);
  const auto params = splitwire::calibrate_params(values);
  for (auto _ : state) benchmark::DoNotOptimize(splitwire::quantize(values, params));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Quantize)->Arg(5488)->Arg(150528);

void BM_Requantize(benchmark::State& state) {
  splitwire::QuantTensor t{{5488}, {0.05, -3}, std::vector<std::int8_t>(5488, 17)};
  for (auto _ : state) benchmark::DoNotOptimize(splitwire::requantize(t, {0.07, 4}));
  state.SetItemsProcessed(state.iterations() * 5488);
}
BENCHMARK(BM_Requantize);

void BM_DemoInference(benchmark::State& state) {
  const auto model = splitwire::runtime::demo_model(42);
  const auto input = splitwire::runtime::make_input(model, 42);
  for (auto _ : state) benchmark::DoNotOptimize(splitwire::runtime::infer_full(model, input));
}
BENCHMARK(BM_DemoInference);

void BM_SplitInference(benchmark::State& state) {
  const auto model = splitwire::runtime::demo_model(42);
  const auto input = splitwire::runtime::make_input(model, 42);
  const auto [part1, part2] = splitwire::runtime::split_toy(model, splitwire::runtime::kDemoSplitIndex);
  for (auto _ : state) {
    benchmark::DoNotOptimize(splitwire::runtime::infer_part(part2, splitwire::runtime::infer_part(part1, input)));
  }
}
BENCHMARK(BM_SplitInference);

}  // namespace

BENCHMARK_MAIN();
