#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "kscope/fix8.hpp"
#include "test_support.hpp"

using namespace kscope;
using kscope::test::exact;
using kscope::test::exact_encode;
using kscope::test::Rational;

TEST(Fix8, EncodeExamples) {
  EXPECT_EQ(encode(1.0).bits(), 0x20);
  EXPECT_EQ(encode(5.0).bits(), 0x7F);
  EXPECT_EQ(encode(-4.5).bits(), 0x80);
  EXPECT_DOUBLE_EQ(decode(kFix8Max), 3.96875);
  EXPECT_DOUBLE_EQ(decode(kFix8Min), -4.0);
}

TEST(Fix8, RoundTripAllPatterns) {
  for (int b = 0; b < 256; ++b) {
    const Fix8 v = Fix8::from_bits(static_cast<std::uint8_t>(b));
    EXPECT_EQ(encode(decode(v)), v) << b;
    EXPECT_EQ(exact(v), Rational(static_cast<std::int8_t>(b), 32));
  }
}

TEST(Fix8, EncodeTiesAwayFromZero) {
  EXPECT_EQ(encode(1.5 / 32).raw(), 2);
  EXPECT_EQ(encode(-1.5 / 32).raw(), -2);
  EXPECT_EQ(encode(0.5 / 32).raw(), 1);
  EXPECT_EQ(encode(-0.5 / 32).raw(), -1);
  EXPECT_EQ(encode(0.49 / 32).raw(), 0);
}

TEST(Fix8, EncodeMatchesExactOracleOnGrid) {
  // Every multiple of 1/256 in [-5, 5] is exact in double; compare with rational rounding.
  for (int k = -1280; k <= 1280; ++k) {
    EXPECT_EQ(encode(k / 256.0), exact_encode(Rational(k, 256))) << k;
  }
}

TEST(Fix8, EncodeMonotone) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-6.0, 6.0);
  for (int i = 0; i < 20000; ++i) {
    double a = d(rng), b = d(rng);
    if (a > b) std::swap(a, b);
    EXPECT_LE(encode(a), encode(b));
  }
}

TEST(Fix8, MulExamples) {
  EXPECT_EQ(mul(kFix8One, kFix8One).raw(), 0x400);
  EXPECT_EQ(mul(encode(2.5), kFix8Zero).raw(), 0);
  EXPECT_DOUBLE_EQ(mul(kFix8Min, kFix8Min).to_double(), 16.0);
}

TEST(Fix8, MulExhaustiveExact) {
  for (int a = 0; a < 256; ++a) {
    for (int b = 0; b < 256; ++b) {
      const Fix8 x = Fix8::from_bits(static_cast<std::uint8_t>(a));
      const Fix8 y = Fix8::from_bits(static_cast<std::uint8_t>(b));
      ASSERT_EQ(exact(mul(x, y)), exact(x) * exact(y)) << a << " " << b;
    }
  }
}

TEST(Fix8, AccAddExamples) {
  EXPECT_DOUBLE_EQ(acc_add(mul(kFix8One, kFix8One), mul(encode(2.0), kFix8One)).to_double(), 3.0);
  const WideAcc x = WideAcc::from_raw(12345);
  EXPECT_EQ(acc_add(x, WideAcc{}), x);
}

TEST(Fix8, AccAddThousandSixteens) {
  const WideAcc sixteen = mul(kFix8Min, kFix8Min);
  WideAcc s{};
  Rational oracle = 0;
  for (int i = 0; i < 1024; ++i) {
    s = acc_add(s, sixteen);
    oracle += exact(sixteen);
  }
  EXPECT_EQ(exact(s), oracle);
  EXPECT_DOUBLE_EQ(s.to_double(), 16384.0);
}

TEST(Fix8, HeadroomFor65536WorstCaseProducts) {
  const WideAcc worst = mul(kFix8Min, kFix8Min);
  WideAcc s{};
  for (int i = 0; i < 65536; ++i) s = acc_add_checked(s, worst);
  EXPECT_EQ(s.raw(), std::int64_t{16384} * 65536);
}

TEST(Fix8, CheckedAddSignalsOverflow) {
  const WideAcc big = WideAcc::from_raw(std::numeric_limits<std::int32_t>::max());
  EXPECT_THROW(acc_add_checked(big, WideAcc::from_raw(1)), std::overflow_error);
  EXPECT_NO_THROW(acc_add_checked(big, WideAcc::from_raw(-1)));
}

TEST(Fix8, AccAddOrderIndependent) {
  std::mt19937_64 rng(11);
  std::vector<WideAcc> terms;
  for (int i = 0; i < 500; ++i) terms.push_back(mul(test::random_fix8(rng), test::random_fix8(rng)));
  WideAcc fwd{}, rev{};
  for (auto t : terms) fwd = acc_add(fwd, t);
  for (auto it = terms.rbegin(); it != terms.rend(); ++it) rev = acc_add(rev, *it);
  std::shuffle(terms.begin(), terms.end(), rng);
  // Pairwise tree.
  while (terms.size() > 1) {
    std::vector<WideAcc> next;
    for (std::size_t i = 0; i + 1 < terms.size(); i += 2) next.push_back(acc_add(terms[i], terms[i + 1]));
    if (terms.size() % 2) next.push_back(terms.back());
    terms = next;
  }
  EXPECT_EQ(fwd, rev);
  EXPECT_EQ(fwd, terms.front());
}

TEST(Fix8, RequantizeExamples) {
  EXPECT_EQ(requantize(mul(kFix8One, kFix8One)).bits(), 0x20);
  EXPECT_EQ(requantize(WideAcc::from_raw(100 * 1024)).bits(), 0x7F);
  EXPECT_EQ(requantize(WideAcc::from_raw(-100 * 1024)).bits(), 0x80);
  // 0.046875 = 1.5 steps -> 2 steps.
  const WideAcc one_and_half = WideAcc::from_raw(48);
  EXPECT_EQ(requantize(one_and_half).bits(), 0x02);
  EXPECT_EQ(requantize(one_and_half), exact_encode(exact(one_and_half)));
}

TEST(Fix8, RequantizeMatchesExactOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int32_t> d(-300000, 300000);
  for (int i = 0; i < 50000; ++i) {
    const WideAcc a = WideAcc::from_raw(d(rng));
    ASSERT_EQ(requantize(a), exact_encode(exact(a))) << a.raw();
  }
  for (std::int32_t r = -5000; r <= 5000; ++r) {
    ASSERT_EQ(requantize(WideAcc::from_raw(r)), exact_encode(exact(WideAcc::from_raw(r)))) << r;
  }
}

TEST(Fix8, MultiplyByOneIsLossless) {
  for (int b = 0; b < 256; ++b) {
    const Fix8 a = Fix8::from_bits(static_cast<std::uint8_t>(b));
    EXPECT_EQ(requantize(mul(a, encode(1.0))), a);
  }
}

TEST(ActTable, IdentityAndRelu) {
  const ActTable id = build_act_table(ActKind::identity);
  const ActTable relu = build_act_table(ActKind::relu);
  int fixed = 0;
  for (int b = 0; b < 256; ++b) {
    const Fix8 x = Fix8::from_bits(static_cast<std::uint8_t>(b));
    EXPECT_EQ(id(x), x);
    if (relu(x) == x) ++fixed;
    if (b >= 0x80) EXPECT_EQ(relu(x).bits(), 0x00);
  }
  EXPECT_EQ(fixed, 128);
  EXPECT_EQ(activate(relu, encode(-1.0)), encode(0));
  EXPECT_EQ(activate(relu, encode(2.5)), encode(2.5));
}

TEST(ActTable, SigmoidFromDoubles) {
  const ActTable sig = build_act_table(ActKind::sigmoid);
  EXPECT_EQ(activate(sig, encode(0)), encode(0.5));
  for (int b = 0; b < 256; ++b) {
    const Fix8 x = Fix8::from_bits(static_cast<std::uint8_t>(b));
    EXPECT_EQ(sig(x), encode(1.0 / (1.0 + std::exp(-decode(x)))));
  }
  // Monotone over decode order.
  for (int r = -128; r < 127; ++r) {
    EXPECT_LE(sig(Fix8::from_raw(static_cast<std::int8_t>(r))), sig(Fix8::from_raw(static_cast<std::int8_t>(r + 1))));
  }
}

TEST(ActTable, BytesRoundTripAndKind) {
  for (ActKind k : {ActKind::identity, ActKind::relu, ActKind::sigmoid}) {
    const ActTable t = build_act_table(k);
    const auto bytes = t.to_bytes();
    const ActTable back = ActTable::from_bytes(bytes);
    EXPECT_EQ(back, t);
    EXPECT_EQ(back.kind, k);
  }
  std::array<std::uint8_t, 256> custom{};
  custom[5] = 9;
  EXPECT_EQ(ActTable::from_bytes(custom).kind, ActKind::custom);
}

TEST(ActTable, UnknownKind) {
  EXPECT_THROW(parse_act_kind("tanh"), std::invalid_argument);
  EXPECT_THROW(build_act_table(ActKind::custom), std::invalid_argument);
  EXPECT_EQ(parse_act_kind("relu"), ActKind::relu);
}

TEST(Fix8, ByteMapping) {
  EXPECT_EQ(byte_to_fix8(0).raw(), 0);
  EXPECT_EQ(byte_to_fix8(255).raw(), 32);
  for (int b = 0; b < 256; ++b) {
    EXPECT_EQ(byte_to_fix8(static_cast<std::uint8_t>(b)), exact_encode(Rational(b, 256))) << b;
  }
}
