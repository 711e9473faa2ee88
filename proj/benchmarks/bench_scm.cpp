#include <benchmark/benchmark.h>

#include "cotprune/scm.hpp"

namespace {

using namespace cotprune::scm;

ScmSpec fixture(const char* name) {
  return load_scm(std::filesystem::path(COTPRUNE_FIXTURE_DIR) / "scm" / (std::string(name) + ".scm"));
}

void BM_TruePns(benchmark::State& state) {
  const auto scm = fixture("monotone_mixed");
  for (auto _ : state) benchmark::DoNotOptimize(true_pns(scm, *scm.query));
}
BENCHMARK(BM_TruePns);

void BM_VerifyFixture(benchmark::State& state) {
  const auto scm = fixture("non_monotone");
  for (auto _ : state) benchmark::DoNotOptimize(verify_fixture(scm));
}
BENCHMARK(BM_VerifyFixture);

void BM_ParseFixture(benchmark::State& state) {
  const auto path = std::filesystem::path(COTPRUNE_FIXTURE_DIR) / "scm" / "bernoulli_03.scm";
  for (auto _ : state) benchmark::DoNotOptimize(load_scm(path));
}
BENCHMARK(BM_ParseFixture);

}  // namespace
