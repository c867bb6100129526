#include "kscope/fix8.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace kscope {

Fix8 encode(double x) {
  const double scaled = x * Fix8::kScale;
  if (scaled >= 127.0) return kFix8Max;
  if (scaled <= -128.0) return kFix8Min;
  // std::round rounds half away from zero.
  const double r = std::round(scaled);
  return Fix8::from_raw(static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0)));
}

WideAcc acc_add(WideAcc a, WideAcc b) {
  const auto wide = static_cast<std::int64_t>(a.raw()) + b.raw();
  assert(wide >= std::numeric_limits<std::int32_t>::min() && wide <= std::numeric_limits<std::int32_t>::max() &&
         "WideAcc overflow");
  (void)wide;
  const auto sum = static_cast<std::uint32_t>(a.raw()) + static_cast<std::uint32_t>(b.raw());
  return WideAcc::from_raw(static_cast<std::int32_t>(sum));
}

WideAcc acc_add_checked(WideAcc a, WideAcc b) {
  const auto wide = static_cast<std::int64_t>(a.raw()) + b.raw();
  if (wide < std::numeric_limits<std::int32_t>::min() || wide > std::numeric_limits<std::int32_t>::max()) {
    throw std::overflow_error("WideAcc overflow: " + std::to_string(a.raw()) + " + " + std::to_string(b.raw()));
  }
  return WideAcc::from_raw(static_cast<std::int32_t>(wide));
}

Fix8 requantize(WideAcc a) {
  constexpr int shift = WideAcc::kFracBits - Fix8::kFracBits;
  constexpr std::int64_t half = std::int64_t{1} << (shift - 1);
  const std::int64_t v = a.raw();
  const std::int64_t mag = v < 0 ? -v : v;
  std::int64_t q = (mag + half) >> shift;
  if (v < 0) q = -q;
  if (q > 127) q = 127;
  if (q < -128) q = -128;
  return Fix8::from_raw(static_cast<std::int8_t>(q));
}

std::string_view to_string(ActKind kind) {
  switch (kind) {
    case ActKind::identity: return "identity";
    case ActKind::relu: return "relu";
    case ActKind::sigmoid: return "sigmoid";
    case ActKind::custom: return "custom";
  }
  return "custom";
}

ActKind parse_act_kind(std::string_view name) {
  if (name == "identity" || name == "linear" || name == "none") return ActKind::identity;
  if (name == "relu") return ActKind::relu;
  if (name == "sigmoid") return ActKind::sigmoid;
  throw std::invalid_argument("unknown activation kind '" + std::string(name) + "'");
}

ActTable build_act_table(ActKind kind) {
  ActTable t;
  t.kind = kind;
  for (int b = 0; b < 256; ++b) {
    const Fix8 x = Fix8::from_bits(static_cast<std::uint8_t>(b));
    switch (kind) {
      case ActKind::identity: t.entries[b] = x; break;
      case ActKind::relu: t.entries[b] = x.raw() < 0 ? kFix8Zero : x; break;
      case ActKind::sigmoid: t.entries[b] = encode(1.0 / (1.0 + std::exp(-x.to_double()))); break;
      case ActKind::custom: throw std::invalid_argument("cannot build a custom activation table");
    }
  }
  return t;
}

std::array<std::uint8_t, 256> ActTable::to_bytes() const {
  std::array<std::uint8_t, 256> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = entries[i].bits();
  return out;
}

ActTable ActTable::from_bytes(std::span<const std::uint8_t, 256> bytes) {
  ActTable t;
  for (std::size_t i = 0; i < 256; ++i) t.entries[i] = Fix8::from_bits(bytes[i]);
  t.kind = ActKind::custom;
  for (ActKind k : {ActKind::identity, ActKind::relu, ActKind::sigmoid}) {
    if (build_act_table(k) == t) {
      t.kind = k;
      break;
    }
  }
  return t;
}

}  // namespace kscope
