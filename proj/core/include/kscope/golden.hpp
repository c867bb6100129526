#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kscope/fix8.hpp"

namespace kscope {

// Quantizer exchange pair: a real value and the Fix8 that encode() must produce for it.
struct GoldenPair {
  double real = 0;
  Fix8 expected;
  friend bool operator==(const GoldenPair&, const GoldenPair&) = default;
};

// Text format: a "real,fix8" header, then one line per pair with the real as
// shortest round-trip decimal and the Fix8 byte as two hex digits.
std::string write_golden(std::span<const GoldenPair> pairs);
// Throws FormatError with the offending line number.
std::vector<GoldenPair> read_golden(std::string_view text);

// Every rounding midpoint and the saturation edges, then reals uniform over [-5, 5),
// truncated to `count` and each paired with encode(real).
std::vector<GoldenPair> make_golden(std::size_t count, std::uint64_t seed = 1);

// Pairs where encode(real) != expected.
std::vector<GoldenPair> golden_mismatches(std::span<const GoldenPair> pairs);

}  // namespace kscope
