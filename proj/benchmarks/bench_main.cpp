#include <benchmark/benchmark.h>

#include <cstdlib>

#include "prefillsim/hybrid_numerics.hpp"
#include "prefillsim/presets.hpp"
#include "prefillsim/scheduler.hpp"
#include "prefillsim/sim.hpp"
#include "prefillsim/workload.hpp"

using namespace prefillsim;

namespace {

struct Presets {
  ModelGeometry geom;
  GpuSpec gpu;
  CostParams params;
};

const Presets& a100_qwen() {
  static const Presets p = [] {
    ::setenv("PREFILLSIM_PRESETS", PREFILLSIM_BENCH_PRESET_DIR, 0);
    const auto m = load_model_preset("qwen-32b-fp8");
    const auto g = load_gpu_preset("a100-40gb");
    return Presets{m.geometry, g.gpu, derive_cost_params(m.geometry, g.gpu, g.knobs)};
  }();
  return p;
}

SimConfig config(const Policy& policy) {
  const auto& p = a100_qwen();
  SimConfig cfg;
  cfg.variant = variant::PrefillOnlyHybrid{};
  cfg.policy = policy;
  cfg.geometry = p.geom;
  cfg.gpu = p.gpu;
  cfg.cost_params = p.params;
  return cfg;
}

}  // namespace

static void BM_BlockChain(benchmark::State& state) {
  const auto trace = gen_credit_verification(1);
  const auto& tokens = *trace.requests.front().tokens;
  for (auto _ : state) benchmark::DoNotOptimize(block_chain(tokens, kDefaultBlockTokens));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tokens.size()));
}
BENCHMARK(BM_BlockChain);

static void BM_CacheInsertEvict(benchmark::State& state) {
  const auto trace = gen_post_recommendation(1);
  std::vector<std::vector<BlockHash>> chains;
  for (const auto& r : trace.requests) chains.push_back(block_chain(*r.tokens, kDefaultBlockTokens));
  const auto capacity = static_cast<Tokens>(state.range(0));
  for (auto _ : state) {
    PrefixCache cache(CacheConfig{kDefaultBlockTokens, capacity});
    double now = 0.0;
    for (const auto& c : chains) cache.insert_chain(c, now += 1.0);
    benchmark::DoNotOptimize(cache.used_tokens());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(chains.size()));
}
BENCHMARK(BM_CacheInsertEvict)->Arg(20000)->Arg(200000)->Unit(benchmark::kMillisecond);

static void BM_ScheduleNext(benchmark::State& state) {
  const auto trace = gen_post_recommendation(2);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<BlockHash>> chains;
  std::vector<WaitingRequest> queue;
  chains.reserve(n);
  for (std::size_t i = 0; i < n; ++i) chains.push_back(block_chain(*trace.requests[i].tokens, kDefaultBlockTokens));
  for (std::size_t i = 0; i < n; ++i) {
    queue.push_back({i, static_cast<double>(i) * 0.01, trace.requests[i].n_input(), chains[i], 0.0});
  }
  PrefixCache cache(CacheConfig{kDefaultBlockTokens, 100000});
  for (std::size_t i = 0; i < n; i += 7) cache.insert_chain(chains[i], static_cast<double>(i));
  const Policy policy = policy::SrjfCalibrated{};
  for (auto _ : state) benchmark::DoNotOptimize(schedule_next(queue, cache, nullptr, policy, 100.0));
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ScheduleNext)->RangeMultiplier(4)->Range(4, 256)->Complexity();

static void BM_HybridForward(benchmark::State& state) {
  const auto params = numerics::ToyBlockParams::random(1, 32, 96);
  const auto x = numerics::random_input(2, 256, 32);
  const numerics::HybridOptions opts{static_cast<std::size_t>(state.range(0)), true, true};
  for (auto _ : state) {
    numerics::ScratchTracker tracker;
    benchmark::DoNotOptimize(numerics::block_forward_hybrid(params, x, opts, tracker));
  }
}
BENCHMARK(BM_HybridForward)->Arg(8)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_SimulateCredit(benchmark::State& state) {
  const auto trace = poisson_arrivals(gen_credit_verification(3), 0.1, 3);
  const auto cfg = config(policy::SrjfCalibrated{});
  for (auto _ : state) benchmark::DoNotOptimize(run(trace, cfg).mean_latency);
}
BENCHMARK(BM_SimulateCredit)->Unit(benchmark::kMillisecond);

static void BM_SimulatePostRec(benchmark::State& state) {
  const auto trace = poisson_arrivals(gen_post_recommendation(4), 8.0, 4);
  const auto cfg = config(state.range(0) ? Policy{policy::SrjfCalibrated{}} : Policy{policy::Fifo{}});
  for (auto _ : state) benchmark::DoNotOptimize(run(trace, cfg).mean_latency);
}
BENCHMARK(BM_SimulatePostRec)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK_MAIN();
