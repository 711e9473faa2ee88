#include <benchmark/benchmark.h>

#include <string>

#include "cotprune/trace.hpp"

namespace {

std::string long_chain(int steps) {
  std::string text;
  for (int i = 0; i < steps; ++i) {
    if (i) text += "\n\n";
    text += "step " + std::to_string(i) + ": carry the " + std::to_string(i * 7) + " into the next column";
  }
  return text;
}

void BM_CountTokens(benchmark::State& state) {
  const auto text = long_chain(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cotprune::count_tokens(text));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_CountTokens)->Range(8, 1024);

void BM_SegmentChain(benchmark::State& state) {
  const auto text = long_chain(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cotprune::segment_chain(text));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_SegmentChain)->Range(8, 1024);

}  // namespace
