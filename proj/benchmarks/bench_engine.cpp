#include <benchmark/benchmark.h>

#include "kscope/compiler.hpp"
#include "kscope/engine.hpp"
#include "kscope/fixtures.hpp"
#include "kscope/traffic_gen.hpp"

using namespace kscope;

namespace {

EngineConfig config(std::string_view preset, bool timing_only) {
  EngineConfig cfg = EngineConfig::preset(preset);
  const auto fast = fixtures::mlp_e(), slow = fixtures::rnn_m();
  cfg.fast = compile(fast, fixtures::make_weights(fast)).image;
  cfg.slow = compile(slow, fixtures::make_weights(slow)).image;
  cfg.timing_only = timing_only;
  return cfg;
}

void BM_RunTrace(benchmark::State& state, bool timing_only) {
  const EngineConfig cfg = config("k8fpe", timing_only);
  const auto trace = gen_traffic(TrafficProfile::iscx_like(static_cast<std::size_t>(state.range(0)), 1e6, 9));
  for (auto _ : state) benchmark::DoNotOptimize(run_trace(cfg, trace.frames));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(trace.frames.size()));
  state.SetLabel("packets");
}
BENCHMARK_CAPTURE(BM_RunTrace, full, false)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_RunTrace, timing_only, true)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_PeakSearch(benchmark::State& state) {
  EngineConfig cfg = config("k4fpe", true);
  cfg.fpes = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(peak_search(cfg));
}
BENCHMARK(BM_PeakSearch)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_GenTraffic(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(gen_traffic(TrafficProfile::iscx_like(10000)));
}
BENCHMARK(BM_GenTraffic)->Unit(benchmark::kMillisecond);

}  // namespace
