#include <benchmark/benchmark.h>

#include "cotprune/engine.hpp"
#include "cotprune/scm_backend.hpp"

namespace {

using namespace cotprune;

// One step estimate on the Bernoulli fixture; range(0) is k, range(1) the
// rollout concurrency.
void BM_EstimateStep(benchmark::State& state) {
  const auto scm = scm::load_scm(std::filesystem::path(COTPRUNE_FIXTURE_DIR) / "scm" / "bernoulli_03.scm");
  auto backend = std::make_shared<ScmBackend>(scm, 1);
  const ModelRoles roles{backend, backend, nullptr, nullptr};
  const CoTTrace trace{Query{"b", scm.question}, scm.gold, Chain::from_texts(scm.query->factual_chain),
                       std::nullopt};
  PruneConfig config;
  config.k = static_cast<int>(state.range(0));
  config.rollout_concurrency = static_cast<int>(state.range(1));
  GenParams params;
  std::int64_t seed = 0;
  for (auto _ : state) {
    params.seed = seed++;
    benchmark::DoNotOptimize(estimate_pns_step(trace, {}, 0, roles, config, params));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EstimateStep)->Args({64, 1})->Args({1000, 1})->Args({1000, 8})->UseRealTime();

}  // namespace
