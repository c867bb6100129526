#include <gtest/gtest.h>

#include <numeric>

#include "kscope/compiler.hpp"
#include "kscope/errors.hpp"
#include "kscope/oracle.hpp"
#include "test_support.hpp"

using namespace kscope;
using namespace kscope::test;

namespace {

FpeResult run_fpe(const CompiledProgram& cp, std::span<const std::uint8_t> input, const FpeConfig& cfg = {}) {
  FpeSim sim(cfg);
  sim.load_program(cp.image);
  return sim.run_inference(input);
}

HpeResult run_hpe(const CompiledProgram& cp, std::span<const std::uint8_t> input, const HpeConfig& cfg = {}) {
  HpeSim sim(cfg);
  sim.load_program(cp.image);
  return sim.run_inference(input);
}

std::vector<Fix8> elems(const Fix8Vector& v) { return {v.elems.begin(), v.elems.begin() + v.size()}; }

ModelSpec model(Target target, std::size_t input_len, std::vector<Layer> layers) {
  ModelSpec m;
  m.name = "t";
  m.target = target;
  m.input_len = input_len;
  m.layers = std::move(layers);
  m.check();
  return m;
}

template <typename Fn>
std::string resource_of(Fn&& fn) {
  try {
    fn();
  } catch (const CapacityError& e) {
    return e.resource();
  }
  return "none";
}

std::size_t count_ops(const ProgramImage& img, Opcode op) {
  std::size_t n = 0;
  for (const auto& b : img.bundles) {
    if (const auto* a = std::get_if<AccOp>(&b.compute); a && a->op == op) ++n;
    if (op == Opcode::MM && std::holds_alternative<MmOp>(b.compute)) ++n;
  }
  return n;
}

// Checks bit-exactness, cycle prediction and the stall-free schedule on a few inputs.
void expect_hpe_matches(const ModelSpec& m, const WeightsFile& w, std::mt19937_64& rng, const HpeConfig& cfg = {}) {
  CompileOptions opts;
  opts.hpe = cfg;
  const CompiledProgram cp = compile(m, w, opts);
  for (int i = 0; i < 3; ++i) {
    const auto input = random_bytes(rng, m.input_len);
    const HpeResult r = run_hpe(cp, input, cfg);
    ASSERT_FALSE(r.fault) << r.fault->message << "\n" << serialize_model(m);
    EXPECT_EQ(elems(r.output), elems(model_oracle(m, w, input))) << serialize_model(m);
    EXPECT_EQ(r.cycles, cp.predicted_cycles) << serialize_model(m);
    EXPECT_EQ(r.stall_cycles, 0u) << serialize_model(m);
    EXPECT_LE(r.max_bank_accesses, cfg.ports_per_bank);
  }
}

}  // namespace

TEST(LowerDenseFpe, BundleCountsPerBlockPlan) {
  const std::pair<std::size_t, std::size_t> dims[] = {{32, 8}, {64, 128}, {40, 10}};
  const std::size_t expected[] = {1, 32, 4};
  for (std::size_t i = 0; i < 3; ++i) {
    const DenseLayer l{dims[i].first, dims[i].second, ActKind::relu, false};
    LayerWeights w{Fix8Matrix(l.in, l.out), std::vector<Fix8>(l.out)};
    const auto low = lower_dense_fpe(l, w, plan_blocks(l.in, l.out, kFpeBlockRows, kFpeBlockCols));
    EXPECT_EQ(low.bundles.size(), expected[i]) << l.in << "x" << l.out;
  }
}

TEST(LowerDenseFpe, OpSequenceAndParams) {
  std::mt19937_64 rng(11);
  const DenseLayer l{40, 10, ActKind::identity, false};
  LayerWeights w{random_weights(rng, 40, 10), std::vector<Fix8>(10)};
  const auto low = lower_dense_fpe(l, w, plan_blocks(40, 10, kFpeBlockRows, kFpeBlockCols));
  std::vector<Opcode> ops;
  for (const auto& b : low.bundles) ops.push_back(std::get<MvOp>(b.compute).op);
  EXPECT_EQ(ops, (std::vector<Opcode>{Opcode::MV, Opcode::MVAA, Opcode::MV, Opcode::MVAA}));
  // Two output blocks, each a 32-row and an 8-row weight block of 8 columns.
  EXPECT_EQ(low.params.size(), 2u * (32 + 8) * 8);
  EXPECT_EQ(low.preload.addr, 0u);
  EXPECT_EQ(low.preload.len, 32u * 8);
  EXPECT_EQ(low.params[0], w.weights.at(0, 0).bits());
  EXPECT_EQ(low.params[9], w.weights.at(1, 1).bits());
  EXPECT_EQ(low.params[32 * 8 + 7], w.weights.at(32, 7).bits());
  EXPECT_EQ(low.params[40 * 8 + 1], w.weights.at(0, 9).bits());
  EXPECT_EQ(low.params[40 * 8 + 2], 0u);
}

TEST(LowerDenseFpe, RunsOnSimulator) {
  std::mt19937_64 rng(12);
  for (const auto [in, out] : {std::pair<std::size_t, std::size_t>{32, 8}, {64, 128}, {40, 10}, {17, 3}}) {
    const DenseLayer l{in, out, ActKind::relu, false};
    LayerWeights w{random_weights(rng, in, out), std::vector<Fix8>(out)};
    const auto low = lower_dense_fpe(l, w, plan_blocks(in, out, kFpeBlockRows, kFpeBlockCols));
    ProgramImage img;
    img.target = Target::fpe;
    img.act_tables[0] = build_act_table(ActKind::relu);
    img.param_image = low.params;
    const auto words = static_cast<std::uint8_t>((in + kLanes - 1) / kLanes);
    img.bundles.push_back(Bundle{StartOp{static_cast<std::uint16_t>(in)}, low.preload, LdrOp{0, LdrSource::input, 0, words}});
    img.bundles.insert(img.bundles.end(), low.bundles.begin(), low.bundles.end());
    img.bundles.push_back(Bundle{FinOp{1, static_cast<std::uint16_t>(out)}, NopOp{}, NopOp{}});
    FpeConfig cfg;
    cfg.pcache_bytes = 65536;
    FpeSim sim(cfg);
    sim.load_program(img);
    const auto input = random_bytes(rng, in);
    const FpeResult r = sim.run_inference(input);
    ASSERT_FALSE(r.fault);
    std::vector<Fix8> v;
    for (auto b : input) v.push_back(byte_to_fix8(b));
    EXPECT_EQ(elems(r.output), scalar_gemv(v, w.weights, build_act_table(ActKind::relu)));
    EXPECT_EQ(r.cycles, img.bundles.size() + cfg.pipeline_depth);
  }
}

TEST(LowerDenseFpe, RejectsMismatchedPlan) {
  const DenseLayer l{40, 10, ActKind::relu, false};
  LayerWeights w{Fix8Matrix(40, 10), std::vector<Fix8>(10)};
  EXPECT_THROW(lower_dense_fpe(l, w, plan_blocks(40, 10, 16, 8)), std::invalid_argument);
  EXPECT_THROW(lower_dense_fpe(l, w, plan_blocks(32, 10, 32, 8)), std::invalid_argument);
}

TEST(CompileFpe, RandomModelsMatchOracle) {
  std::mt19937_64 rng(21);
  for (int iter = 0; iter < 200; ++iter) {
    const ModelSpec m = random_fpe_model(rng);
    const WeightsFile w = random_model_weights(rng, m);
    const CompiledProgram cp = compile(m, w);
    EXPECT_EQ(cp.predicted_cycles, cp.image.bundles.size() + FpeConfig{}.pipeline_depth);
    for (int i = 0; i < 3; ++i) {
      const auto input = random_bytes(rng, m.input_len);
      const FpeResult r = run_fpe(cp, input);
      ASSERT_FALSE(r.fault) << r.fault->message << "\n" << serialize_model(m);
      ASSERT_EQ(elems(r.output), elems(model_oracle(m, w, input))) << serialize_model(m);
      EXPECT_EQ(r.cycles, cp.predicted_cycles);
      EXPECT_EQ(r.raw_hazards, 0u) << serialize_model(m);
    }
  }
}

TEST(CompileFpe, BiasFreeSingleBlockIsOneBundle) {
  const ModelSpec m = model(Target::fpe, 32, {DenseLayer{32, 8, ActKind::relu, false}});
  const CompiledProgram cp = compile(m, zero_weights(m));
  // START, one MVAA, FIN.
  EXPECT_EQ(cp.image.bundles.size(), 3u);
  EXPECT_EQ(cp.predicted_cycles, 3u + 6);
}

TEST(CompileFpe, ModelTooLargeForPcache) {
  const ModelSpec m = model(Target::fpe, 64,
                            {DenseLayer{64, 128, ActKind::relu}, DenseLayer{128, 64, ActKind::relu},
                             DenseLayer{64, 6, ActKind::identity}});
  std::mt19937_64 rng(22);
  const WeightsFile w = random_model_weights(rng, m);
  EXPECT_EQ(resource_of([&] { compile(m, w); }), "pCache");
  CompileOptions big;
  big.fpe.pcache_bytes = 65536;
  const CompiledProgram cp = compile(m, w, big);
  const auto input = random_bytes(rng, 64);
  const FpeResult r = run_fpe(cp, input, big.fpe);
  ASSERT_FALSE(r.fault);
  EXPECT_EQ(elems(r.output), elems(model_oracle(m, w, input)));
  EXPECT_EQ(r.cycles, cp.predicted_cycles);
}

TEST(CompileFpe, CapacityErrorsNameTheResource) {
  const auto dense = [](std::size_t in, std::size_t out) { return DenseLayer{in, out, ActKind::relu, true}; };
  {
    const ModelSpec m = model(Target::fpe, 65, {dense(65, 4)});
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m)); }), "input buffer");
  }
  {
    const ModelSpec m = model(Target::fpe, 8, {dense(8, 129)});
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m)); }), "output buffer");
  }
  {
    const ModelSpec m = model(Target::fpe, 64, {dense(64, 1000), dense(1000, 4)});
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m)); }), "regfile");
  }
  {
    std::vector<Layer> layers(10, dense(48, 48));
    const ModelSpec m = model(Target::fpe, 48, layers);
    CompileOptions opts;
    opts.fpe.pcache_bytes = 65536;
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m), opts); }), "iCache");
  }
}

TEST(CompileFpe, RejectsHpeOnlyLayers) {
  ModelSpec m;
  m.target = Target::fpe;
  m.input_len = 16;
  m.layers = {Conv1DLayer{1, 4, 3, 1, ActKind::relu}};
  EXPECT_THROW(compile(m, WeightsFile{}), std::invalid_argument);
}

TEST(CompileFpe, LayoutCoversParams) {
  std::mt19937_64 rng(23);
  const ModelSpec m = model(Target::fpe, 40, {DenseLayer{40, 24, ActKind::relu}, DenseLayer{24, 5, ActKind::sigmoid}});
  const CompiledProgram cp = compile(m, random_model_weights(rng, m));
  std::size_t params = 0;
  for (const auto& e : cp.layout) {
    if (e.space == "pCache") params += e.size;
  }
  EXPECT_EQ(params, cp.image.param_image.size());
  EXPECT_EQ(cp.input_len, 40u);
  EXPECT_EQ(cp.output_len, 5u);
}

TEST(CompileHpe, RandomModelsMatchOracle) {
  std::mt19937_64 rng(31);
  for (int iter = 0; iter < 150; ++iter) {
    const ModelSpec m = random_hpe_model(rng);
    const WeightsFile w = random_model_weights(rng, m);
    expect_hpe_matches(m, w, rng);
    if (HasFailure()) break;
  }
}

TEST(CompileHpe, SingleChannelConvIsOneTile) {
  const ModelSpec m = model(Target::hpe, 8, {Conv1DLayer{1, 4, 3, 1, ActKind::relu, false}});
  std::mt19937_64 rng(32);
  const WeightsFile w = random_model_weights(rng, m);
  const CompiledProgram cp = compile(m, w);
  EXPECT_EQ(cp.image.param_image.size(), kHpeTileBytes);
  EXPECT_EQ(count_ops(cp.image, Opcode::MM), 1u);
  expect_hpe_matches(m, w, rng);
}

TEST(CompileHpe, KernelOneConvIsDensePerPosition) {
  std::mt19937_64 rng(33);
  const ModelSpec m = model(Target::hpe, 60, {Conv1DLayer{4, 20, 1, 1, ActKind::relu, false}});
  const WeightsFile w = random_model_weights(rng, m);
  const CompiledProgram cp = compile(m, w);
  const auto input = random_bytes(rng, 60);
  const HpeResult r = run_hpe(cp, input);
  ASSERT_FALSE(r.fault);
  ASSERT_EQ(r.rows, 15u);
  ASSERT_EQ(r.cols, 20u);
  const ActTable relu = build_act_table(ActKind::relu);
  for (std::size_t p = 0; p < 15; ++p) {
    std::vector<Fix8> v;
    for (std::size_t c = 0; c < 4; ++c) v.push_back(byte_to_fix8(input[p * 4 + c]));
    const auto row = scalar_gemv(v, w.layers[0].weights, relu);
    for (std::size_t q = 0; q < 20; ++q) EXPECT_EQ(r.output[p * 20 + q], row[q]) << p << "," << q;
  }
}

TEST(CompileHpe, ConvThenPoolFusesIntoMerge) {
  std::mt19937_64 rng(34);
  const ModelSpec m = model(Target::hpe, 64,
                            {Conv1DLayer{2, 16, 3, 1, ActKind::relu}, MaxPool1DLayer{2, 2},
                             Conv1DLayer{16, 8, 2, 1, ActKind::relu}, MaxPool1DLayer{3, 1}});
  const WeightsFile w = random_model_weights(rng, m);
  const CompiledProgram cp = compile(m, w);
  EXPECT_EQ(count_ops(cp.image, Opcode::ACCP), 2u);
  EXPECT_EQ(count_ops(cp.image, Opcode::ACCA), 0u);
  expect_hpe_matches(m, w, rng);
}

TEST(CompileHpe, StandalonePoolUsesIdentityTile) {
  std::mt19937_64 rng(35);
  const ModelSpec m = model(Target::hpe, 32,
                            {Conv1DLayer{1, 40, 2, 1, ActKind::relu, false}, MaxPool1DLayer{2, 1},
                             MaxPool1DLayer{2, 2}, DenseLayer{15 * 40, 5, ActKind::identity}});
  const WeightsFile w = random_model_weights(rng, m);
  const CompiledProgram cp = compile(m, w);
  EXPECT_EQ(count_ops(cp.image, Opcode::ACCP), 4u);  // two fused, two identity passes
  expect_hpe_matches(m, w, rng);
}

TEST(CompileHpe, WidePoolRejected) {
  const ModelSpec m =
      model(Target::hpe, 32, {Conv1DLayer{1, 4, 1, 1, ActKind::relu}, MaxPool1DLayer{5, 1}, MaxPool1DLayer{5, 5}});
  EXPECT_THROW(compile(m, zero_weights(m)), std::invalid_argument);
}

TEST(CompileHpe, StridedAndMultiTileConv) {
  std::mt19937_64 rng(36);
  const ModelSpec m = model(Target::hpe, 64,
                            {Conv1DLayer{4, 48, 3, 2, ActKind::relu}, Conv1DLayer{48, 36, 2, 1, ActKind::relu},
                             Conv1DLayer{36, 20, 3, 2, ActKind::sigmoid}});
  expect_hpe_matches(m, random_model_weights(rng, m), rng);
}

TEST(CompileHpe, RnnMatchesOracle) {
  std::mt19937_64 rng(37);
  for (const auto& [in, hidden, t] : {std::tuple<std::size_t, std::size_t, std::size_t>{16, 8, 1},
                                      {16, 12, 3},
                                      {8, 40, 8},
                                      {32, 40, 2},
                                      {64, 33, 1}}) {
    const ModelSpec m = model(Target::hpe, in * t, {RnnLayer{in, hidden, t, ActKind::relu}});
    expect_hpe_matches(m, random_model_weights(rng, m), rng);
  }
  const ModelSpec m = model(Target::hpe, 48, {RnnLayer{16, 40, 3, ActKind::sigmoid}, DenseLayer{40, 6, ActKind::identity}});
  expect_hpe_matches(m, random_model_weights(rng, m), rng);
}

TEST(CompileHpe, DenseMlpMatchesOracle) {
  std::mt19937_64 rng(38);
  const ModelSpec m = model(Target::hpe, 64,
                            {DenseLayer{64, 128, ActKind::relu}, DenseLayer{128, 64, ActKind::relu},
                             DenseLayer{64, 6, ActKind::identity}});
  expect_hpe_matches(m, random_model_weights(rng, m), rng);
}

TEST(CompileHpe, IdenticalTilesShareStorage) {
  const ModelSpec m = model(Target::hpe, 64, {DenseLayer{64, 96, ActKind::relu}, DenseLayer{96, 64, ActKind::relu}});
  const CompiledProgram cp = compile(m, zero_weights(m));
  EXPECT_EQ(cp.image.param_image.size(), kHpeTileBytes);
  EXPECT_GT(count_ops(cp.image, Opcode::MM), 1u);
}

TEST(CompileHpe, CapacityErrorsNameTheResource) {
  {
    const ModelSpec m = model(Target::hpe, 65, {DenseLayer{65, 4, ActKind::relu}});
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m)); }), "input buffer");
  }
  {
    std::mt19937_64 rng(39);
    const ModelSpec m = model(Target::hpe, 64, {DenseLayer{64, 64, ActKind::relu}});
    CompileOptions opts;
    opts.hpe.pcache_bytes = 2 * kHpeTileBytes;
    EXPECT_EQ(resource_of([&] { compile(m, random_model_weights(rng, m), opts); }), "pCache");
  }
  {
    const ModelSpec m = model(Target::hpe, 64, {DenseLayer{64, 64, ActKind::relu}});
    CompileOptions opts;
    opts.hpe.icache_bytes = 10 * kHpeBundleBytes;
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m), opts); }), "iCache");
  }
  {
    const ModelSpec m = model(Target::hpe, 60, {Conv1DLayer{1, 8, 1, 1, ActKind::relu}});
    CompileOptions opts;
    opts.hpe.out_words = 16;
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m), opts); }), "output buffer");
  }
  {
    const ModelSpec m = model(Target::hpe, 60,
                              {Conv1DLayer{1, 96, 1, 1, ActKind::relu}, DenseLayer{60 * 96, 4, ActKind::identity}});
    CompileOptions opts;
    opts.hpe.bank_words = 256;
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m), opts); }), "bank1");
  }
  {
    const ModelSpec m =
        model(Target::hpe, 300, {Conv1DLayer{1, 4, 1, 1, ActKind::relu}, DenseLayer{1200, 2, ActKind::identity}});
    CompileOptions opts;
    opts.hpe.input_bytes = 1024;
    EXPECT_EQ(resource_of([&] { compile(m, zero_weights(m), opts); }), "bank2");
  }
}

TEST(CompileHpe, WideMultiPositionOutputRejected) {
  const ModelSpec m = model(Target::hpe, 16, {Conv1DLayer{1, 40, 1, 1, ActKind::relu}});
  EXPECT_THROW(compile(m, zero_weights(m)), std::invalid_argument);
}

TEST(CompileHpe, LargerInputBuffer) {
  std::mt19937_64 rng(40);
  const ModelSpec m = model(Target::hpe, 400,
                            {Conv1DLayer{4, 32, 5, 1, ActKind::relu}, MaxPool1DLayer{4, 4},
                             Conv1DLayer{32, 32, 3, 1, ActKind::relu}, MaxPool1DLayer{2, 2},
                             DenseLayer{11 * 32, 10, ActKind::identity}});
  HpeConfig cfg;
  cfg.input_bytes = 1024;
  expect_hpe_matches(m, random_model_weights(rng, m), rng, cfg);
}

TEST(PredictCycles, HpeSingleTileFormula) {
  const ModelSpec m = model(Target::hpe, 8, {Conv1DLayer{1, 4, 3, 1, ActKind::relu, false}});
  const CompiledProgram cp = compile(m, zero_weights(m));
  // Preload, MM over 6 rows, merge over 6 rows, drain; the gather overlaps the preload.
  EXPECT_EQ(cp.predicted_cycles, 32u + (6 + 63) + 6 + 3);
}

TEST(PredictCycles, HpeRequiresFin) {
  ProgramImage img;
  img.target = Target::hpe;
  img.bundles.push_back(Bundle{StartOp{0}, NopOp{}, NopOp{}});
  EXPECT_THROW(predict_cycles(img, HpeConfig{}), std::invalid_argument);
}
