#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "kscope/errors.hpp"
#include "kscope/hpe_sim.hpp"
#include "test_support.hpp"

using namespace kscope;

namespace {

// Appends rows [r0, r0+32) of m (32 columns, zero-padded) as one row-major weight tile.
void append_tile(std::vector<std::uint8_t>& img, const Fix8Matrix& m, std::size_t r0) {
  for (std::size_t r = 0; r < kHpeTileDim; ++r) {
    for (std::size_t c = 0; c < kHpeTileDim; ++c) {
      const bool in = r0 + r < m.rows && c < m.cols;
      img.push_back(in ? m.at(r0 + r, c).bits() : 0);
    }
  }
}

Bundle bundle(ComputeOp c, ParamOp p = NopOp{}, DataOp d = NopOp{}) { return Bundle{c, p, d}; }

GatherOp gather(LdrSource src, std::uint16_t base, std::uint8_t stride, std::uint16_t dst, std::uint8_t rows,
                std::uint8_t width = 32) {
  GatherOp g;
  g.src = src;
  g.src_base = base;
  g.src_stride = stride;
  g.dst = dst;
  g.width = width;
  g.rows = rows;
  return g;
}

AccOp acc(Opcode op, std::uint16_t offset, AccOperands ops, HpeDest dst_kind, std::uint16_t dst, std::uint16_t len,
          std::uint8_t table = 0, std::uint8_t window = 1, std::uint8_t stride = 1) {
  AccOp a;
  a.op = op;
  a.offset = offset;
  a.operands = ops;
  a.dst_kind = dst_kind;
  a.dst = dst;
  a.len = len;
  a.table = table;
  a.pool_window = window;
  a.pool_stride = stride;
  return a;
}

std::vector<Fix8> decode(std::span<const std::uint8_t> bytes) {
  std::vector<Fix8> v;
  for (auto b : bytes) v.push_back(byte_to_fix8(b));
  return v;
}

// Single-tile GEMM: l rows of 32 input bytes (stride 32) times one 32x32 tile, activated into out.
ProgramImage single_tile(const Fix8Matrix& w, std::uint8_t l, LdrSource src = LdrSource::input) {
  ProgramImage img;
  img.target = Target::hpe;
  append_tile(img.param_image, w, 0);
  img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 0}, gather(src, 0, 32, 0, l)),
                 bundle(MmOp{0, l, 2, 0}),
                 bundle(acc(Opcode::ACCA, 0, AccOperands::bank2, HpeDest::out, 0, l, 1)),
                 bundle(FinOp{l, 32})};
  return img;
}

const OpEvent* find_event(const HpeResult& r, Opcode op) {
  for (const auto& e : r.events) {
    if (e.op == op) return &e;
  }
  return nullptr;
}

}  // namespace

TEST(HpeConfig, Defaults) {
  HpeConfig c;
  EXPECT_EQ(c.array_dim, 32u);
  EXPECT_EQ(c.bank_words, 1024u);
  EXPECT_EQ(c.ports_per_bank, 2u);
  EXPECT_EQ(c.pcache_bytes, 524288u);
  EXPECT_EQ(c.icache_bytes, 8192u);
  EXPECT_EQ(c.weight_preload_cycles, 32u);
  EXPECT_EQ(c.mm_cycles(32), 95u);
  HpeConfig bad;
  bad.array_dim = 16;
  EXPECT_THROW(HpeSim{bad}, std::invalid_argument);
}

TEST(HpeSim, IdentityTileCopiesRows) {
  std::mt19937_64 rng(21);
  const auto in = test::random_bytes(rng, 64);
  HpeSim sim;
  sim.load_program(single_tile(Fix8Matrix::identity(32), 2));
  const auto r = sim.run_inference(in);
  ASSERT_FALSE(r.fault) << r.fault->message;
  EXPECT_EQ(r.rows, 2u);
  EXPECT_EQ(r.cols, 32u);
  EXPECT_EQ(r.output.elems, decode(in));
  EXPECT_EQ(r.stall_cycles, 0u);
}

TEST(HpeSim, SingleTileCyclesMatchFormula) {
  std::mt19937_64 rng(22);
  const Fix8Matrix w = test::random_weights(rng, 32, 32);
  for (std::uint8_t l = 1; l <= 32; ++l) {
    HpeSim sim;
    const auto img = single_tile(w, l, LdrSource::one);
    sim.load_program(img);
    const auto r = sim.run_inference({});
    ASSERT_FALSE(r.fault);
    // preload + (l + 2n - 1) + merge(l) + drain
    EXPECT_EQ(r.cycles, 32u + (l + 63u) + l + 3u) << int(l);
    const auto* mm = find_event(r, Opcode::MM);
    ASSERT_NE(mm, nullptr);
    EXPECT_EQ(mm->issue, 32u);
    EXPECT_EQ(mm->complete - mm->issue, l + 63u);
    EXPECT_EQ(r.stall_cycles, 0u);
  }
}

TEST(HpeSim, MmLatencyAffineSlopeOne) {
  std::vector<std::uint64_t> lat;
  for (std::uint16_t l = 1; l <= 256; ++l) {
    ProgramImage img;
    img.target = Target::hpe;
    img.param_image.assign(kHpeTileBytes, 0);
    img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 0}), bundle(MmOp{0, l, 3, 0}), bundle(FinOp{1, 0})};
    HpeSim sim;
    sim.load_program(img);
    const auto r = sim.run_inference({});
    const auto* mm = find_event(r, Opcode::MM);
    ASSERT_NE(mm, nullptr);
    lat.push_back(mm->complete - mm->issue);
    EXPECT_EQ(r.cycles, 32u + l + 63u + 3u);
  }
  for (std::size_t i = 1; i < lat.size(); ++i) EXPECT_EQ(lat[i] - lat[i - 1], 1u);
  EXPECT_EQ(lat[0], 64u);
}

TEST(HpeSim, RandomTileMatchesOracle) {
  std::mt19937_64 rng(23);
  const ActTable relu = build_act_table(ActKind::relu);
  for (int trial = 0; trial < 30; ++trial) {
    const Fix8Matrix w = test::random_weights(rng, 32, 32);
    auto img = single_tile(w, 1 + rng() % 2);
    img.act_tables[1] = trial % 2 ? relu : build_act_table(ActKind::sigmoid);
    const std::uint8_t l = std::get<GatherOp>(img.bundles[0].data).rows;
    HpeSim sim;
    sim.load_program(img);
    const auto in = test::random_bytes(rng, 64);
    const auto r = sim.run_inference(in);
    ASSERT_FALSE(r.fault);
    const auto v = decode(in);
    for (std::size_t row = 0; row < l; ++row) {
      const std::vector<Fix8> x(v.begin() + 32 * row, v.begin() + 32 * row + 32);
      const auto want = test::scalar_gemv(x, w, img.act_tables[1]);
      EXPECT_TRUE(std::equal(want.begin(), want.end(), r.output.elems.begin() + 32 * row));
    }
  }
}

TEST(HpeSim, TwoTileAccumulationMatchesOracle) {
  std::mt19937_64 rng(24);
  HpeConfig cfg;
  cfg.input_bytes = 1024;
  for (int trial = 0; trial < 20; ++trial) {
    const auto l = static_cast<std::uint8_t>(1 + rng() % 16);
    const Fix8Matrix w = test::random_weights(rng, 64, 32);
    ProgramImage img;
    img.target = Target::hpe;
    append_tile(img.param_image, w, 0);
    append_tile(img.param_image, w, 32);
    img.act_tables[2] = build_act_table(ActKind::relu);
    img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 0}, gather(LdrSource::input, 0, 32, 0, l)),
                   bundle(NopOp{}, NopOp{}, gather(LdrSource::input, static_cast<std::uint16_t>(32 * l), 32, 64, l)),
                   bundle(MmOp{0, l, 2, 0}),
                   bundle(NopOp{}, LdpOp{0, 1, 0}),
                   bundle(MmOp{64, l, 3, 0}),
                   bundle(acc(Opcode::ACCA, 0, AccOperands::both, HpeDest::out, 0, l, 2)),
                   bundle(FinOp{l, 32})};
    HpeSim sim(cfg);
    sim.load_program(img);
    const auto in = test::random_bytes(rng, 64u * l);
    const auto r = sim.run_inference(in);
    ASSERT_FALSE(r.fault) << r.fault->message;
    EXPECT_EQ(r.stall_cycles, 0u);
    const auto v = decode(in);
    for (std::size_t row = 0; row < l; ++row) {
      std::vector<Fix8> x(v.begin() + 32 * row, v.begin() + 32 * row + 32);
      x.insert(x.end(), v.begin() + 32 * (l + row), v.begin() + 32 * (l + row) + 32);
      const auto want = test::scalar_gemv(x, w, img.act_tables[2]);
      EXPECT_TRUE(std::equal(want.begin(), want.end(), r.output.elems.begin() + 32 * row)) << trial << ' ' << row;
    }
  }
}

TEST(HpeSim, MergeWithZerosIsIdentity) {
  std::mt19937_64 rng(25);
  const Fix8Matrix w = test::random_weights(rng, 32, 32);
  for (auto ops : {AccOperands::both, AccOperands::bank2}) {
    ProgramImage img = single_tile(w, 2);
    img.bundles[2] = bundle(acc(Opcode::ACCA, 0, ops, HpeDest::out, 0, 2, 0));
    HpeSim sim;
    sim.load_program(img);
    const auto in = test::random_bytes(rng, 64);
    const auto r = sim.run_inference(in);
    const auto v = decode(in);
    for (std::size_t row = 0; row < 2; ++row) {
      const std::vector<Fix8> x(v.begin() + 32 * row, v.begin() + 32 * row + 32);
      const auto want = test::scalar_gemv(x, w, build_act_table(ActKind::identity));
      EXPECT_TRUE(std::equal(want.begin(), want.end(), r.output.elems.begin() + 32 * row));
    }
  }
}

TEST(HpeSim, ReluOnNegativeSumsGivesZeros) {
  Fix8Matrix neg(32, 32);
  for (std::size_t i = 0; i < 32; ++i) neg.at(i, i) = encode(-1.0);
  ProgramImage img = single_tile(neg, 4, LdrSource::one);
  img.act_tables[1] = build_act_table(ActKind::relu);
  HpeSim sim;
  sim.load_program(img);
  const auto r = sim.run_inference({});
  EXPECT_EQ(r.output.elems, std::vector<Fix8>(4 * 32, kFix8Zero));
  img.act_tables[1] = build_act_table(ActKind::identity);
  sim.load_program(img);
  EXPECT_EQ(sim.run_inference({}).output.elems, std::vector<Fix8>(4 * 32, encode(-1.0)));
}

TEST(HpeSim, PooledMergeMatchesOracle) {
  std::mt19937_64 rng(26);
  HpeConfig cfg;
  cfg.input_bytes = 1024;
  const ActTable relu = build_act_table(ActKind::relu);
  for (int trial = 0; trial < 30; ++trial) {
    const auto l = static_cast<std::uint8_t>(2 + rng() % 20);
    const auto window = static_cast<std::uint8_t>(1 + rng() % std::min<int>(4, l));
    const auto stride = static_cast<std::uint8_t>(1 + rng() % 4);
    const std::size_t outs = (l - window) / stride + 1;
    const Fix8Matrix w = test::random_weights(rng, 32, 32);
    ProgramImage img = single_tile(w, l);
    img.act_tables[1] = relu;
    img.bundles[2] = bundle(acc(Opcode::ACCP, 0, AccOperands::bank2, HpeDest::out, 0, l, 1, window, stride));
    img.bundles[3] = bundle(FinOp{static_cast<std::uint16_t>(outs), 32});
    HpeSim sim(cfg);
    sim.load_program(img);
    const auto in = test::random_bytes(rng, 32u * l);
    const auto r = sim.run_inference(in);
    ASSERT_FALSE(r.fault) << r.fault->message;
    const auto v = decode(in);
    std::vector<std::vector<Fix8>> act;
    for (std::size_t row = 0; row < l; ++row) {
      act.push_back(test::scalar_gemv(std::vector<Fix8>(v.begin() + 32 * row, v.begin() + 32 * row + 32), w, relu));
    }
    ASSERT_EQ(r.output.elems.size(), outs * 32);
    for (std::size_t o = 0; o < outs; ++o) {
      for (std::size_t j = 0; j < 32; ++j) {
        test::Rational best = test::exact(act[o * stride][j]);
        for (std::size_t q = 1; q < window; ++q) best = std::max(best, test::exact(act[o * stride + q][j]));
        EXPECT_EQ(test::exact(r.output.elems[o * 32 + j]), best);
      }
    }
  }
}

TEST(HpeSim, AdversarialBankOneConflictStalls) {
  // MM streams bank 1 while a bank1 -> bank1 gather needs a read and a write on the same bank: 3 accesses.
  ProgramImage img;
  img.target = Target::hpe;
  img.param_image.assign(kHpeTileBytes, 0);
  img.bundles = {bundle(StartOp{}, LdpOp{0, 0, 0}),
                 bundle(MmOp{0, 40, 2, 0}, NopOp{}, gather(LdrSource::bank1, 100, 1, 200, 20)),
                 bundle(FinOp{1, 0})};
  HpeSim sim;
  sim.load_program(img);
  const auto r = sim.run_inference({});
  ASSERT_FALSE(r.fault);
  EXPECT_EQ(r.stall_cycles, 40u);
  EXPECT_LE(r.max_bank_accesses, 2u);
  const auto* g = find_event(r, Opcode::LDR);
  ASSERT_NE(g, nullptr);
  EXPECT_EQ(g->complete - g->issue, 40u + 20u);

  HpeConfig wide;
  wide.ports_per_bank = 3;
  HpeSim sim3(wide);
  sim3.load_program(img);
  const auto r3 = sim3.run_inference({});
  EXPECT_EQ(r3.stall_cycles, 0u);
  EXPECT_EQ(r3.max_bank_accesses, 3u);
}

TEST(HpeSim, ScoreboardSerializesDependentOps) {
  ProgramImage img = single_tile(Fix8Matrix::identity(32), 2);
  HpeSim sim;
  sim.load_program(img);
  const auto r = sim.run_inference(std::vector<std::uint8_t>(64, 100));
  const auto* mm = find_event(r, Opcode::MM);
  const auto* a = find_event(r, Opcode::ACCA);
  ASSERT_TRUE(mm && a);
  EXPECT_GE(a->issue, mm->complete);
}

TEST(HpeSim, PortDisciplineOnRandomPrograms) {
  std::mt19937_64 rng(27);
  auto u = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int trial = 0; trial < 100; ++trial) {
    ProgramImage img;
    img.target = Target::hpe;
    img.param_image = test::random_bytes(rng, 4 * kHpeTileBytes);
    img.bundles.push_back(bundle(StartOp{}));
    for (int i = 0; i < 20; ++i) {
      Bundle b;
      switch (u(0, 3)) {
        case 0: b.compute = MmOp{static_cast<std::uint16_t>(u(0, 900)), static_cast<std::uint16_t>(u(1, 100)),
                                 static_cast<std::uint8_t>(u(2, 3)), static_cast<std::uint16_t>(u(0, 900))}; break;
        case 1: b.compute = acc(Opcode::ACC, static_cast<std::uint16_t>(u(0, 900)), AccOperands::both,
                                u(0, 1) ? HpeDest::bank2 : HpeDest::bank3, static_cast<std::uint16_t>(u(0, 900)),
                                static_cast<std::uint16_t>(u(1, 100))); break;
        case 2: b.compute = acc(Opcode::ACCA, static_cast<std::uint16_t>(u(0, 900)), AccOperands::both,
                                HpeDest::bank1, static_cast<std::uint16_t>(u(0, 900)),
                                static_cast<std::uint16_t>(u(1, 100))); break;
        default: break;
      }
      if (u(0, 2) == 0) b.param = LdpOp{0, static_cast<std::uint32_t>(u(0, 3)), 0};
      if (u(0, 2) == 0) b.data = gather(LdrSource::bank1, static_cast<std::uint16_t>(u(0, 900)), 1,
                                        static_cast<std::uint16_t>(u(0, 900)), static_cast<std::uint8_t>(u(1, 60)));
      img.bundles.push_back(b);
    }
    img.bundles.push_back(bundle(FinOp{1, 0}));
    HpeSim sim;
    sim.load_program(img);
    const auto r1 = sim.run_inference({});
    ASSERT_FALSE(r1.fault) << r1.fault->message;
    EXPECT_LE(r1.max_bank_accesses, 2u);
    const auto r2 = sim.run_inference({});
    EXPECT_EQ(r1.cycles, r2.cycles);
    EXPECT_EQ(r1.stall_cycles, r2.stall_cycles);
    EXPECT_GE(r1.cycles, img.bundles.size() + 3);
  }
}

TEST(HpeSim, LoadAndFaults) {
  ProgramImage fpe;
  fpe.bundles = {bundle(FinOp{1, 0})};
  HpeSim sim;
  EXPECT_THROW(sim.load_unchecked(fpe), std::invalid_argument);
  EXPECT_THROW(sim.load_program(fpe), ValidationError);

  ProgramImage big;
  big.target = Target::hpe;
  big.bundles = {bundle(FinOp{1, 0})};
  big.param_image.assign(524288 + 1, 0);
  EXPECT_THROW(sim.load_program(big), CapacityError);

  ProgramImage bad;
  bad.target = Target::hpe;
  bad.bundles = {bundle(StartOp{}), bundle(MmOp{1000, 30, 2, 0}), bundle(FinOp{1, 0})};
  sim.load_unchecked(bad);
  auto r = sim.run_inference({});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->pc, 1u);

  bad.bundles[1] = bundle(MvOp{});
  sim.load_unchecked(bad);
  EXPECT_TRUE(sim.run_inference({}).fault);

  bad.bundles[1] = bundle(NopOp{}, LdpOp{0, 600, 0});
  sim.load_unchecked(bad);
  EXPECT_TRUE(sim.run_inference({}).fault);

  bad.bundles.pop_back();
  bad.bundles[1] = bundle(NopOp{});
  sim.load_unchecked(bad);
  r = sim.run_inference({});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->pc, 2u);

  ProgramImage in;
  in.target = Target::hpe;
  in.bundles = {bundle(StartOp{64}), bundle(FinOp{1, 0})};
  sim.load_program(in);
  EXPECT_THROW(sim.run_inference(std::vector<std::uint8_t>(10)), DimensionError);
}

TEST(HpeSim, TraceHasPortColumns) {
  HpeSim sim;
  sim.load_program(single_tile(Fix8Matrix::identity(32), 1, LdrSource::one));
  std::ostringstream os;
  const auto r = sim.run_inference({}, &os);
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), static_cast<long>(r.cycles - 3 + 1));
  EXPECT_NE(s.find(" b1="), std::string::npos);
  EXPECT_NE(s.find(" b2="), std::string::npos);
  EXPECT_NE(s.find(" b3="), std::string::npos);
  EXPECT_EQ(s.rfind("cycle=0 pc=0 issue=START", 0), 0u);
}

TEST(Maxpool, Examples) {
  const std::vector<Fix8> a = {encode(1.0), encode(-2.0), encode(0.5)};
  EXPECT_EQ(maxpool(a), encode(1.0));
  const std::vector<Fix8> same(5, encode(-0.75));
  EXPECT_EQ(maxpool(same), encode(-0.75));
  EXPECT_THROW(maxpool(std::span<const Fix8>{}), std::invalid_argument);
}

TEST(Maxpool, MatchesScalarOracle) {
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto v = test::random_vector(rng, 1 + rng() % 9).elems;
    test::Rational best = test::exact(v[0]);
    for (const auto& x : v) best = std::max(best, test::exact(x));
    EXPECT_EQ(test::exact(maxpool(v)), best);
  }
}
