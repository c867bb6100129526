#include <benchmark/benchmark.h>

#include "kscope/compiler.hpp"
#include "kscope/fixtures.hpp"
#include "kscope/fpe_sim.hpp"
#include "kscope/hpe_sim.hpp"
#include "kscope/isa.hpp"

using namespace kscope;

namespace {

ProgramImage compiled(const ModelSpec& spec) { return compile(spec, fixtures::make_weights(spec)).image; }

template <class Sim>
void BM_Inference(benchmark::State& state, const ModelSpec& spec) {
  const ProgramImage img = compiled(spec);
  Sim sim;
  sim.load_program(img);
  const std::vector<std::uint8_t> input(spec.input_len, 0x5A);
  std::uint64_t cycles = 0;
  for (auto _ : state) {
    const auto r = sim.run_inference(input);
    cycles += r.cycles;
    benchmark::DoNotOptimize(r);
  }
  state.counters["sim_cycles/s"] = benchmark::Counter(static_cast<double>(cycles), benchmark::Counter::kIsRate);
}
void BM_Fpe(benchmark::State& state, const ModelSpec& spec) { BM_Inference<FpeSim>(state, spec); }
void BM_Hpe(benchmark::State& state, const ModelSpec& spec) { BM_Inference<HpeSim>(state, spec); }
BENCHMARK_CAPTURE(BM_Fpe, mlp_e, fixtures::mlp_e());
BENCHMARK_CAPTURE(BM_Fpe, mlp_m, fixtures::mlp_m());
BENCHMARK_CAPTURE(BM_Hpe, rnn_m, fixtures::rnn_m());
BENCHMARK_CAPTURE(BM_Hpe, cnn_e, fixtures::cnn_e());

void BM_Compile(benchmark::State& state, const ModelSpec& spec) {
  const WeightsFile w = fixtures::make_weights(spec);
  for (auto _ : state) benchmark::DoNotOptimize(compile(spec, w));
}
BENCHMARK_CAPTURE(BM_Compile, mlp_e, fixtures::mlp_e());
BENCHMARK_CAPTURE(BM_Compile, cnn_e, fixtures::cnn_e());

void BM_EncodeDecode(benchmark::State& state) {
  const ProgramImage img = compiled(fixtures::rnn_m());
  for (auto _ : state) benchmark::DoNotOptimize(decode_binary(encode_binary(img)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(img.bundles.size()));
}
BENCHMARK(BM_EncodeDecode);

void BM_AsmDisasm(benchmark::State& state) {
  const ProgramImage img = compiled(fixtures::rnn_m());
  for (auto _ : state) benchmark::DoNotOptimize(assemble_unchecked(disassemble(img), img.target));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(img.bundles.size()));
}
BENCHMARK(BM_AsmDisasm);

}  // namespace
