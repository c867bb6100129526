#include <benchmark/benchmark.h>

#include <random>

#include "kscope/blocked_linalg.hpp"
#include "kscope/fix8.hpp"

using namespace kscope;

namespace {

std::vector<Fix8> random_fix8(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Fix8> out(n);
  for (auto& v : out) v = Fix8::from_bits(static_cast<std::uint8_t>(rng()));
  return out;
}

void BM_MulRequantize(benchmark::State& state) {
  const auto a = random_fix8(4096, 1), b = random_fix8(4096, 2);
  for (auto _ : state) {
    for (std::size_t i = 0; i < a.size(); ++i) benchmark::DoNotOptimize(requantize(mul(a[i], b[i])));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(a.size()));
}
BENCHMARK(BM_MulRequantize);

void BM_Gemv(benchmark::State& state, bool blocked) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Fix8Vector v(random_fix8(n, 3));
  const Fix8Matrix m(n, n, random_fix8(n * n, 4));
  const BlockPlan plan = plan_blocks(n, n, 16, 16);
  const ActTable act = build_act_table(ActKind::relu);
  for (auto _ : state) {
    benchmark::DoNotOptimize(blocked ? gemv_blocked(v, m, plan, act) : gemv_ref(v, m, act));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK_CAPTURE(BM_Gemv, ref, false)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK_CAPTURE(BM_Gemv, blocked, true)->RangeMultiplier(4)->Range(16, 256);

void BM_GemmBlocked(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Fix8Matrix a(n, n, random_fix8(n * n, 5)), b(n, n, random_fix8(n * n, 6));
  const BlockPlan plan = plan_blocks(n, n, 32, 32);
  const ActTable act = build_act_table(ActKind::identity);
  for (auto _ : state) benchmark::DoNotOptimize(gemm_blocked(a, b, plan, act));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_GemmBlocked)->Arg(64)->Arg(128);

}  // namespace
