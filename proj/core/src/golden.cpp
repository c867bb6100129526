#include "kscope/golden.hpp"

#include <charconv>
#include <cmath>
#include <random>

#include "kscope/errors.hpp"

namespace kscope {

std::string write_golden(std::span<const GoldenPair> pairs) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "real,fix8\n";
  char buf[64];
  for (const auto& p : pairs) {
    const auto res = std::to_chars(buf, buf + sizeof buf, p.real);
    out.append(buf, res.ptr);
    out += ',';
    out += kHex[p.expected.bits() >> 4];
    out += kHex[p.expected.bits() & 0xF];
    out += '\n';
  }
  return out;
}

std::vector<GoldenPair> read_golden(std::string_view text) {
  std::vector<GoldenPair> out;
  std::size_t line_no = 0;
  bool header = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fail = [&](const char* what) {
      throw FormatError("golden line " + std::to_string(line_no) + ": " + what);
    };
    if (!header) {
      if (line != "real,fix8") fail("expected header 'real,fix8'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) fail("missing ','");
    GoldenPair p;
    const auto real = line.substr(0, comma), byte = line.substr(comma + 1);
    const auto r = std::from_chars(real.data(), real.data() + real.size(), p.real);
    if (r.ec != std::errc{} || r.ptr != real.data() + real.size() || !std::isfinite(p.real)) fail("bad real");
    unsigned bits = 0;
    const auto b = std::from_chars(byte.data(), byte.data() + byte.size(), bits, 16);
    if (byte.size() != 2 || b.ec != std::errc{} || b.ptr != byte.data() + byte.size()) fail("bad fix8 byte");
    p.expected = Fix8::from_bits(static_cast<std::uint8_t>(bits));
    out.push_back(p);
  }
  if (!header) throw FormatError("golden file is empty");
  return out;
}

std::vector<GoldenPair> make_golden(std::size_t count, std::uint64_t seed) {
  std::vector<GoldenPair> out;
  const auto add = [&](double x) { out.push_back({x, encode(x)}); };
  for (int k = -130; k <= 129; ++k) add((k + 0.5) / Fix8::kScale);
  add(-4.0);
  add(3.96875);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  while (out.size() < count) add(dist(rng));
  if (out.size() > count) out.resize(count);
  return out;
}

std::vector<GoldenPair> golden_mismatches(std::span<const GoldenPair> pairs) {
  std::vector<GoldenPair> bad;
  for (const auto& p : pairs) {
    if (encode(p.real) != p.expected) bad.push_back(p);
  }
  return bad;
}

}  // namespace kscope
