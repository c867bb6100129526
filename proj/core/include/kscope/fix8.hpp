#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace kscope {

// 8-bit two's-complement Q2.5: value = bits / 32, range [-4.0, 3.96875].
class Fix8 {
 public:
  static constexpr int kFracBits = 5;
  static constexpr int kScale = 1 << kFracBits;

  constexpr Fix8() = default;
  static constexpr Fix8 from_bits(std::uint8_t bits) { return Fix8(static_cast<std::int8_t>(bits)); }
  static constexpr Fix8 from_raw(std::int8_t raw) { return Fix8(raw); }

  constexpr std::uint8_t bits() const { return static_cast<std::uint8_t>(raw_); }
  constexpr std::int8_t raw() const { return raw_; }
  constexpr double to_double() const { return static_cast<double>(raw_) / kScale; }

  friend constexpr bool operator==(Fix8, Fix8) = default;
  // Ordered by decoded value.
  friend constexpr auto operator<=>(Fix8 a, Fix8 b) { return a.raw_ <=> b.raw_; }

 private:
  constexpr explicit Fix8(std::int8_t raw) : raw_(raw) {}
  std::int8_t raw_ = 0;
};

// 32-bit two's-complement accumulator with 10 fractional bits. A Fix8 x Fix8
// product (Q4.10) is exact in it, and 2^16 worst-case products fit.
class WideAcc {
 public:
  static constexpr int kFracBits = 10;
  static constexpr int kScale = 1 << kFracBits;

  constexpr WideAcc() = default;
  static constexpr WideAcc from_raw(std::int32_t raw) { return WideAcc(raw); }

  constexpr std::int32_t raw() const { return raw_; }
  constexpr double to_double() const { return static_cast<double>(raw_) / kScale; }

  friend constexpr bool operator==(WideAcc, WideAcc) = default;
  friend constexpr auto operator<=>(WideAcc a, WideAcc b) { return a.raw_ <=> b.raw_; }

 private:
  constexpr explicit WideAcc(std::int32_t raw) : raw_(raw) {}
  std::int32_t raw_ = 0;
};

inline constexpr Fix8 kFix8Zero = Fix8::from_raw(0);
inline constexpr Fix8 kFix8One = Fix8::from_raw(32);
inline constexpr Fix8 kFix8Max = Fix8::from_raw(127);
inline constexpr Fix8 kFix8Min = Fix8::from_raw(-128);

// Round to nearest (ties away from zero), saturating. Total on finite input.
Fix8 encode(double x);
inline double decode(Fix8 v) { return v.to_double(); }

constexpr WideAcc mul(Fix8 a, Fix8 b) {
  return WideAcc::from_raw(static_cast<std::int32_t>(a.raw()) * static_cast<std::int32_t>(b.raw()));
}

// Two's-complement wrapping add. Debug builds assert that no wrap happened.
WideAcc acc_add(WideAcc a, WideAcc b);
// Throws std::overflow_error when the exact sum leaves the 32-bit range.
WideAcc acc_add_checked(WideAcc a, WideAcc b);

// WideAcc -> Q2.5, round to nearest (ties away from zero), saturating.
Fix8 requantize(WideAcc a);

// Raw packet byte -> NN input element: encode(byte / 256).
constexpr Fix8 byte_to_fix8(std::uint8_t byte) {
  return Fix8::from_raw(static_cast<std::int8_t>((static_cast<int>(byte) + 4) >> 3));
}

enum class ActKind : std::uint8_t { identity = 0, relu = 1, sigmoid = 2, custom = 3 };

std::string_view to_string(ActKind kind);
// Throws std::invalid_argument for anything but identity/relu/sigmoid.
ActKind parse_act_kind(std::string_view name);

// 256-entry activation lookup table, indexed by Fix8 bit pattern.
struct ActTable {
  ActKind kind = ActKind::identity;
  std::array<Fix8, 256> entries{};

  Fix8 operator()(Fix8 a) const { return entries[a.bits()]; }
  std::array<std::uint8_t, 256> to_bytes() const;
  // Kind is recovered when the bytes match a built-in table, else ActKind::custom.
  static ActTable from_bytes(std::span<const std::uint8_t, 256> bytes);

  // Two tables are the same table when their entries agree; kind is a label.
  friend bool operator==(const ActTable& a, const ActTable& b) { return a.entries == b.entries; }
};

ActTable build_act_table(ActKind kind);
inline Fix8 activate(const ActTable& t, Fix8 a) { return t(a); }

}  // namespace kscope
