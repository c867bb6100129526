#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "kscope/errors.hpp"
#include "kscope/fpe_sim.hpp"
#include "test_support.hpp"

using namespace kscope;

namespace {

// Appends rows [r0, r0+32) x cols [c0, c0+8) of m (zero-padded) as one row-major param block.
void append_block(std::vector<std::uint8_t>& img, const Fix8Matrix& m, std::size_t r0, std::size_t c0) {
  for (std::size_t r = 0; r < kFpeBlockRows; ++r) {
    for (std::size_t c = 0; c < kFpeBlockCols; ++c) {
      const bool in = r0 + r < m.rows && c0 + c < m.cols;
      img.push_back(in ? m.at(r0 + r, c0 + c).bits() : 0);
    }
  }
}

Bundle bundle(ComputeOp c, ParamOp p = NopOp{}, DataOp d = NopOp{}) { return Bundle{c, p, d}; }

MvOp mv(Opcode op, std::uint8_t src, std::uint8_t pbuf, std::uint8_t acc = 0) {
  MvOp m;
  m.op = op;
  m.src = src;
  m.pbuf = pbuf;
  m.acc = acc;
  return m;
}

MvOp mvaa_out(std::uint8_t src, std::uint8_t pbuf, std::uint8_t table, std::uint8_t word, std::uint8_t lane) {
  MvOp m = mv(Opcode::MVAA, src, pbuf);
  m.table = table;
  m.dst_kind = FpeDest::out;
  m.dst = word;
  m.dst_lane = lane;
  return m;
}

std::vector<Fix8> input_values(const std::vector<std::uint8_t>& bytes) {
  std::vector<Fix8> v;
  for (auto b : bytes) v.push_back(byte_to_fix8(b));
  return v;
}

// Independent oracle for a single bundle-level GEMV with a given table.
std::vector<Fix8> oracle(const std::vector<Fix8>& v, const Fix8Matrix& m, const ActTable& t) {
  return test::scalar_gemv(v, m, t);
}

// Hand-scheduled (1,64)x(64,Q) product, Q <= 32, written to the output buffer.
ProgramImage gemv64_program(const Fix8Matrix& m, std::uint8_t table) {
  ProgramImage img;
  for (std::size_t cb = 0; cb * kFpeBlockCols < m.cols; ++cb) {
    append_block(img.param_image, m, 0, cb * kFpeBlockCols);
    append_block(img.param_image, m, 32, cb * kFpeBlockCols);
  }
  img.bundles.push_back(bundle(StartOp{64}, LdpOp{0, 0, 256}, LdrOp{0, LdrSource::input, 0, 2}));
  for (std::size_t cb = 0; cb * kFpeBlockCols < m.cols; ++cb) {
    const auto base = static_cast<std::uint32_t>(cb * 512);
    img.bundles.push_back(bundle(mv(Opcode::MV, 0, 0), LdpOp{1, base + 256, 256}));
    const auto next = static_cast<std::uint32_t>(base + 512);
    const bool more = (cb + 1) * kFpeBlockCols < m.cols;
    img.bundles.push_back(bundle(mvaa_out(1, 1, table, 0, static_cast<std::uint8_t>(cb * 8)),
                                 more ? ParamOp{LdpOp{0, next, 256}} : ParamOp{NopOp{}}));
  }
  img.bundles.push_back(bundle(FinOp{1, static_cast<std::uint16_t>(m.cols)}));
  return img;
}

}  // namespace

TEST(FpeConfig, DefaultsAndChecks) {
  FpeConfig c;
  EXPECT_EQ(c.n, 8u);
  EXPECT_EQ(c.t, 8u);
  EXPECT_EQ(c.k, 4u);
  EXPECT_EQ(c.regfile_words, 32u);
  EXPECT_EQ(c.pcache_bytes, 8192u);
  EXPECT_EQ(c.icache_bytes, 1024u);
  EXPECT_EQ(c.pipeline_depth, 6u);
  EXPECT_NO_THROW(c.check());
  FpeConfig bad = c;
  bad.n = 4;
  EXPECT_THROW(FpeSim{bad}, std::invalid_argument);
  bad = c;
  bad.pcache_bytes = 65537;
  EXPECT_THROW(FpeSim{bad}, std::invalid_argument);
}

TEST(FpeSim, IdentityBlockCopiesFirstEightLanes) {
  std::mt19937_64 rng(11);
  const auto bytes = test::random_bytes(rng, 32);
  Fix8Matrix id(32, 8);
  for (std::size_t j = 0; j < 8; ++j) id.at(j, j) = kFix8One;
  ProgramImage img;
  append_block(img.param_image, id, 0, 0);
  img.bundles = {bundle(StartOp{32}, LdpOp{0, 0, 256}, LdrOp{0, LdrSource::input, 0, 1}),
                 bundle(mv(Opcode::MV, 0, 0, 2)), bundle(FinOp{1, 0})};
  FpeSim sim;
  sim.load_program(img);
  sim.begin(bytes);
  sim.step();
  sim.step();
  const auto v = input_values(bytes);
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_EQ(sim.state().acc[2][j], mul(v[j], kFix8One));
    EXPECT_EQ(test::exact(sim.state().acc[2][j]), test::exact(v[j]));
  }
}

TEST(FpeSim, AllOnesThroughIdentityBlock) {
  Fix8Matrix id(32, 8);
  for (std::size_t j = 0; j < 8; ++j) id.at(j, j) = kFix8One;
  ProgramImage img;
  append_block(img.param_image, id, 0, 0);
  img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 256}, LdrOp{4, LdrSource::one, 0, 1}),
                 bundle(mvaa_out(4, 0, 0, 0, 0)), bundle(FinOp{1, 8})};
  FpeSim sim;
  sim.load_program(img);
  const auto r = sim.run_inference(std::vector<std::uint8_t>(32, 0));
  ASSERT_FALSE(r.fault);
  ASSERT_EQ(r.output.size(), 8u);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(r.output[j], kFix8One);
}

TEST(FpeSim, TwoBlockAccumulationMatchesOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto bytes = test::random_bytes(rng, 64);
    const Fix8Matrix m = test::random_matrix(rng, 64, 8);
    ProgramImage img;
    append_block(img.param_image, m, 0, 0);
    append_block(img.param_image, m, 32, 0);
    img.bundles = {bundle(StartOp{64}, LdpOp{0, 0, 256}, LdrOp{0, LdrSource::input, 0, 2}),
                   bundle(mv(Opcode::MV, 0, 0), LdpOp{1, 256, 256}), bundle(mv(Opcode::MVA, 1, 1)),
                   bundle(FinOp{1, 0})};
    FpeSim sim;
    sim.load_program(img);
    sim.begin(bytes);
    for (int i = 0; i < 3; ++i) sim.step();
    const auto v = input_values(bytes);
    for (std::size_t j = 0; j < 8; ++j) {
      test::Rational s = 0;
      for (std::size_t r = 0; r < 64; ++r) s += test::exact(v[r]) * test::exact(m.at(r, j));
      EXPECT_EQ(test::exact(sim.state().acc[0][j]), s);
    }
  }
}

TEST(FpeSim, HandScheduledGemvMatchesOracle) {
  std::mt19937_64 rng(13);
  const ActTable relu = build_act_table(ActKind::relu);
  const ActTable sig = build_act_table(ActKind::sigmoid);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t q = 1 + rng() % 32;
    const Fix8Matrix m = test::random_weights(rng, 64, q);
    ProgramImage img = gemv64_program(m, 1);
    const ActTable& t = trial % 2 ? relu : sig;
    img.act_tables[1] = t;
    FpeSim sim;
    sim.load_program(img);
    for (int in = 0; in < 5; ++in) {
      const auto bytes = test::random_bytes(rng, 64);
      const auto r = sim.run_inference(bytes);
      ASSERT_FALSE(r.fault) << r.fault->message;
      EXPECT_EQ(r.output.elems, oracle(input_values(bytes), m, t));
      EXPECT_EQ(r.cycles, img.bundles.size() + 6);
      EXPECT_EQ(r.raw_hazards, 0u);
    }
  }
}

TEST(FpeSim, FinAddsDrain) {
  ProgramImage img;
  img.bundles = {bundle(StartOp{}), bundle(NopOp{}), bundle(FinOp{1, 0})};
  FpeSim sim;
  sim.load_program(img);
  sim.begin({});
  sim.step();
  sim.step();
  EXPECT_EQ(sim.state().cycle, 2u);
  sim.step();
  EXPECT_TRUE(sim.state().halted);
  EXPECT_EQ(sim.state().cycle, 2u + 1 + 6);
  sim.step();
  EXPECT_EQ(sim.state().cycle, 9u);
}

TEST(FpeSim, DrainFollowsPipelineDepth) {
  ProgramImage img;
  img.bundles = {bundle(StartOp{}), bundle(FinOp{1, 0})};
  for (std::size_t depth : {0u, 1u, 6u, 11u}) {
    FpeConfig c;
    c.pipeline_depth = depth;
    FpeSim sim(c);
    sim.load_program(img);
    EXPECT_EQ(sim.run_inference({}).cycles, 2 + depth);
  }
}

TEST(FpeSim, SlotIndependence) {
  std::mt19937_64 rng(14);
  ProgramImage busy;
  busy.param_image = test::random_bytes(rng, 512);
  busy.bundles = {bundle(StartOp{64}), bundle(NopOp{}, LdpOp{0, 0, 256}, LdrOp{0, LdrSource::input, 0, 2}),
                  bundle(NopOp{}, LdpOp{1, 256, 256}, StrOp{0, 0, 1}), bundle(FinOp{1, 32})};
  ProgramImage idle = busy;
  idle.bundles[1] = bundle(NopOp{});
  idle.bundles[2] = bundle(NopOp{});
  FpeSim a, b;
  a.load_program(busy);
  b.load_program(idle);
  const auto in = test::random_bytes(rng, 64);
  const auto ra = a.run_inference(in);
  const auto rb = b.run_inference(in);
  EXPECT_EQ(ra.cycles, rb.cycles);
  EXPECT_EQ(ra.cycles, 4u + 6);
  const auto v = input_values(in);
  EXPECT_EQ(ra.output.elems, std::vector<Fix8>(v.begin(), v.begin() + 32));
}

TEST(FpeSim, CyclesEqualBundlesPlusDepthOnRandomPrograms) {
  std::mt19937_64 rng(15);
  auto u = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int trial = 0; trial < 300; ++trial) {
    ProgramImage img;
    img.param_image = test::random_bytes(rng, 8192);
    img.bundles.push_back(bundle(StartOp{64}));
    const int n = u(0, 120);
    for (int i = 0; i < n; ++i) {
      Bundle b;
      switch (u(0, 3)) {
        case 0: break;
        case 1: b.compute = mv(Opcode::MV, static_cast<std::uint8_t>(u(0, 31)), static_cast<std::uint8_t>(u(0, 1)),
                               static_cast<std::uint8_t>(u(0, 3))); break;
        case 2: b.compute = mv(Opcode::MVA, static_cast<std::uint8_t>(u(0, 31)), static_cast<std::uint8_t>(u(0, 1)),
                               static_cast<std::uint8_t>(u(0, 3))); break;
        default: {
          MvOp m = mvaa_out(static_cast<std::uint8_t>(u(0, 31)), static_cast<std::uint8_t>(u(0, 1)),
                            static_cast<std::uint8_t>(u(0, 3)), static_cast<std::uint8_t>(u(0, 3)),
                            static_cast<std::uint8_t>(8 * u(0, 3)));
          if (u(0, 1)) m.dst_kind = FpeDest::regfile;
          b.compute = m;
        }
      }
      if (u(0, 1)) b.param = LdpOp{static_cast<std::uint8_t>(u(0, 1)), static_cast<std::uint32_t>(u(0, 31) * 256), 256};
      if (u(0, 2) == 0) b.data = LdrOp{static_cast<std::uint8_t>(u(0, 30)), LdrSource::input,
                                       static_cast<std::uint8_t>(u(0, 1)), 1};
      img.bundles.push_back(b);
    }
    img.bundles.push_back(bundle(FinOp{1, static_cast<std::uint16_t>(u(0, 128))}));
    FpeSim sim;
    sim.load_program(img);
    const auto in = test::random_bytes(rng, 64);
    const auto r1 = sim.run_inference(in);
    ASSERT_FALSE(r1.fault) << r1.fault->message;
    EXPECT_EQ(r1.cycles, img.bundles.size() + 6);
    const auto r2 = sim.run_inference(in);
    EXPECT_EQ(r2.cycles, r1.cycles);
    EXPECT_EQ(r2.output, r1.output);
  }
}

TEST(FpeSim, WritebackVisibleAfterPipelineDepth) {
  Fix8Matrix id(32, 8);
  for (std::size_t j = 0; j < 8; ++j) id.at(j, j) = kFix8One;
  ProgramImage img;
  append_block(img.param_image, id, 0, 0);
  MvOp w = mv(Opcode::MVAA, 0, 0);
  w.dst = 1;
  img.bundles = {bundle(StartOp{32}, LdpOp{0, 0, 256}, LdrOp{0, LdrSource::input, 0, 1}), bundle(w)};
  for (int i = 0; i < 6; ++i) img.bundles.push_back(bundle(NopOp{}, NopOp{}, StrOp{1, 0, 1}));
  img.bundles.push_back(bundle(FinOp{1, 8}));
  std::vector<std::uint8_t> in(32, 200);
  FpeSim sim;
  sim.load_program(img);
  sim.begin(in);
  for (int i = 0; i < 2 + 6; ++i) {
    sim.step();
  }
  // STRs at cycles 2..6 read the pending word; the one at cycle 7 reads the written value.
  EXPECT_EQ(sim.state().raw_hazards, 5u);
  sim.step();
  EXPECT_EQ(sim.state().out[0][0], byte_to_fix8(200));
  EXPECT_EQ(sim.state().out[0][8], kFix8Zero);
}

TEST(FpeSim, RawHazardsCountReadsOfPendingWrites) {
  ProgramImage img;
  img.param_image.assign(256, 0);
  MvOp w = mv(Opcode::MVAA, 0, 0);
  w.dst = 3;
  img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 256}, LdrOp{0, LdrSource::one, 0, 1}), bundle(w)};
  for (int i = 0; i < 3; ++i) img.bundles.push_back(bundle(mv(Opcode::MV, 3, 0)));
  for (int i = 0; i < 3; ++i) img.bundles.push_back(bundle(NopOp{}));
  img.bundles.push_back(bundle(mv(Opcode::MV, 3, 0)));
  img.bundles.push_back(bundle(FinOp{1, 0}));
  FpeSim sim;
  sim.load_program(img);
  EXPECT_EQ(sim.run_inference({}).raw_hazards, 3u);
  // LDP/LDR results are visible on the next cycle, so back-to-back use is hazard-free.
  img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 256}, LdrOp{3, LdrSource::one, 0, 1}), bundle(mv(Opcode::MV, 3, 0)),
                 bundle(FinOp{1, 0})};
  sim.load_program(img);
  EXPECT_EQ(sim.run_inference({}).raw_hazards, 0u);
}

TEST(FpeSim, LoadErrors) {
  ProgramImage hpe;
  hpe.target = Target::hpe;
  hpe.bundles = {bundle(FinOp{1, 0})};
  FpeSim sim;
  EXPECT_THROW(sim.load_program(hpe), ValidationError);
  EXPECT_THROW(sim.load_unchecked(hpe), std::invalid_argument);

  ProgramImage big;
  big.bundles = {bundle(FinOp{1, 0})};
  big.param_image.assign(8193, 0);
  try {
    sim.load_program(big);
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_EQ(e.resource(), "pCache");
  }

  ProgramImage code;
  code.bundles.assign(129, bundle(NopOp{}));
  code.bundles.back() = bundle(FinOp{1, 0});
  EXPECT_THROW(sim.load_program(code), CapacityError);
  code.bundles.erase(code.bundles.begin());
  EXPECT_NO_THROW(sim.load_program(code));
  EXPECT_EQ(sim.state().cycle, 0u);
  EXPECT_EQ(sim.state().pc, 0u);
}

TEST(FpeSim, InputLengthMismatch) {
  ProgramImage img;
  img.bundles = {bundle(StartOp{64}), bundle(FinOp{1, 0})};
  FpeSim sim;
  sim.load_program(img);
  EXPECT_THROW(sim.run_inference(std::vector<std::uint8_t>(32)), DimensionError);
  EXPECT_NO_THROW(sim.run_inference(std::vector<std::uint8_t>(64)));
  EXPECT_THROW(FpeSim{}.run_inference({}), std::logic_error);
}

TEST(FpeSim, FaultsHaltWithPc) {
  ProgramImage img;
  img.bundles = {bundle(StartOp{}), bundle(NopOp{}), bundle(mv(Opcode::MV, 31, 0, 3)), bundle(FinOp{1, 0})};
  FpeConfig c;
  c.regfile_words = 16;
  FpeSim sim(c);
  sim.load_unchecked(img);
  auto r = sim.run_inference({});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->pc, 2u);
  EXPECT_TRUE(r.output.elems.empty());

  img.bundles[2] = bundle(NopOp{}, LdpOp{0, 8000, 256});
  sim.load_unchecked(img);
  r = sim.run_inference({});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->pc, 2u);

  img.bundles.pop_back();
  img.bundles[2] = bundle(NopOp{});
  sim.load_unchecked(img);
  r = sim.run_inference({});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->pc, 3u);

  img.bundles.push_back(bundle(FinOp{1, 129}));
  sim.load_unchecked(img);
  EXPECT_TRUE(sim.run_inference({}).fault);
}

TEST(FpeSim, ZeroInputReluZeroBiasGivesZero) {
  std::mt19937_64 rng(16);
  const Fix8Matrix m = test::random_matrix(rng, 64, 16);
  ProgramImage img = gemv64_program(m, 1);
  img.act_tables[1] = build_act_table(ActKind::relu);
  FpeSim sim;
  sim.load_program(img);
  // byte 0..3 decodes to 0.
  const auto r = sim.run_inference(std::vector<std::uint8_t>(64, 3));
  EXPECT_EQ(r.output.elems, std::vector<Fix8>(16, kFix8Zero));
}

TEST(FpeSim, TraceOneLinePerCycle) {
  std::mt19937_64 rng(17);
  const Fix8Matrix m = test::random_matrix(rng, 64, 8);
  const ProgramImage img = gemv64_program(m, 0);
  FpeSim sim;
  sim.load_program(img);
  std::ostringstream os;
  sim.run_inference(test::random_bytes(rng, 64), &os);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(line.rfind("cycle=" + std::to_string(n) + " pc=" + std::to_string(n) + ' ', 0), 0u) << line;
    ++n;
  }
  EXPECT_EQ(n, img.bundles.size());
  EXPECT_NE(os.str().find("acc0="), std::string::npos);
}

TEST(Argmax, Examples) {
  auto vec = [](std::vector<double> xs) {
    Fix8Vector v;
    for (double x : xs) v.elems.push_back(encode(x));
    v.logical_len = v.elems.size();
    return v;
  };
  EXPECT_EQ(argmax(vec({0.5, 0.5, 0.25})), 0u);
  EXPECT_EQ(argmax(vec({-1, 3, 2})), 1u);
  EXPECT_EQ(argmax(vec({-4, -3.5, -3.5})), 1u);
  EXPECT_THROW(argmax(Fix8Vector{}), std::invalid_argument);
}

TEST(Argmax, MatchesScalarScan) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 2000; ++trial) {
    const Fix8Vector v = test::random_vector(rng, 1 + rng() % 8);
    std::size_t best = 0;
    test::Rational bv = test::exact(v.elems[0]);
    for (std::size_t i = 1; i < v.elems.size(); ++i) {
      if (test::exact(v.elems[i]) > bv) {
        bv = test::exact(v.elems[i]);
        best = i;
      }
    }
    EXPECT_EQ(argmax(v), best);
  }
}
