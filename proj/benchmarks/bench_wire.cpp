#include <algorithm>
#include <random>

#include <benchmark/benchmark.h>

#include "splitwire/wire.hpp"

namespace {

using splitwire::wire::Bytes;

Bytes random_bytes(std::size_t n) {
  std::mt19937_64 rng(7);
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

void BM_Crc32(benchmark::State& state) {
  const auto data = random_bytes(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(splitwire::wire::crc32(data));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Crc32)->Arg(250)->Arg(1460)->Arg(150528);

void BM_ChunkAndEncode(benchmark::State& state) {
  const auto msg = random_bytes(150528);
  const auto chunk = static_cast<std::uint32_t>(state.range(0));
  for (auto _ : state) {
    for (const auto& f : splitwire::wire::chunk_message(msg, chunk)) {
      benchmark::DoNotOptimize(splitwire::wire::encode_frame(f));
    }
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(msg.size()));
}
BENCHMARK(BM_ChunkAndEncode)->Arg(250)->Arg(512)->Arg(1460);

void BM_DecodeAndReassemble(benchmark::State& state) {
  const auto msg = random_bytes(150528);
  std::vector<Bytes> wire;
  for (const auto& f : splitwire::wire::chunk_message(msg, static_cast<std::uint32_t>(state.range(0)))) {
    wire.push_back(splitwire::wire::encode_frame(f));
  }
  std::shuffle(wire.begin(), wire.end(), std::mt19937_64(3));
  for (auto _ : state) {
    std::vector<splitwire::wire::Frame> frames;
    frames.reserve(wire.size());
    for (const auto& w : wire) frames.push_back(splitwire::wire::decode_frame(w));
    benchmark::DoNotOptimize(splitwire::wire::reassemble(frames));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(msg.size()));
}
BENCHMARK(BM_DecodeAndReassemble)->Arg(250)->Arg(1460);

void BM_InMemoryTransfer(benchmark::State& state) {
  const auto msg = random_bytes(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto pair = splitwire::wire::make_in_memory_pair();
    splitwire::wire::send_message(*pair.first, msg, 250);
    benchmark::DoNotOptimize(splitwire::wire::receive_message(*pair.second));
  }
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InMemoryTransfer)->Arg(5488)->Arg(150528);

}  // namespace

BENCHMARK_MAIN();
