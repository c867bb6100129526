#include "kscope/pcap.hpp"

#include <fstream>
#include <iterator>

#include "kscope/errors.hpp"

namespace kscope {

namespace {

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos, bool swap) {
  const std::uint32_t v = static_cast<std::uint32_t>(b[pos]) | (static_cast<std::uint32_t>(b[pos + 1]) << 8) |
                          (static_cast<std::uint32_t>(b[pos + 2]) << 16) | (static_cast<std::uint32_t>(b[pos + 3]) << 24);
  return swap ? __builtin_bswap32(v) : v;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

std::vector<PcapFrame> decode_pcap(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 24) throw FormatError("pcap: truncated global header");
  const std::uint32_t magic = get_u32(bytes, 0, false);
  bool swap = false;
  bool nano = false;
  if (magic == kPcapMagicMicro || magic == kPcapMagicNano) {
    nano = magic == kPcapMagicNano;
  } else if (magic == __builtin_bswap32(kPcapMagicMicro) || magic == __builtin_bswap32(kPcapMagicNano)) {
    swap = true;
    nano = magic == __builtin_bswap32(kPcapMagicNano);
  } else {
    throw FormatError("pcap: bad magic");
  }
  const std::uint32_t link = get_u32(bytes, 20, swap) & 0x0FFFFFFF;
  if (link != kLinkTypeEthernet) throw FormatError("pcap: unsupported link type " + std::to_string(link));
  std::vector<PcapFrame> frames;
  std::size_t pos = 24;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 16) throw FormatError("pcap: truncated record header");
    const std::uint64_t sec = get_u32(bytes, pos, swap);
    const std::uint64_t frac = get_u32(bytes, pos + 4, swap);
    const std::uint32_t incl = get_u32(bytes, pos + 8, swap);
    const std::uint32_t orig = get_u32(bytes, pos + 12, swap);
    pos += 16;
    if (bytes.size() - pos < incl) throw FormatError("pcap: truncated packet data");
    PcapFrame f;
    f.timestamp_ns = sec * 1'000'000'000ull + (nano ? frac : frac * 1000);
    f.orig_len = orig;
    f.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + incl));
    frames.push_back(std::move(f));
    pos += incl;
  }
  return frames;
}

std::vector<std::uint8_t> encode_pcap(std::span<const PcapFrame> frames, std::uint32_t snaplen) {
  std::vector<std::uint8_t> out;
  put_u32(out, kPcapMagicNano);
  put_u16(out, 2);
  put_u16(out, 4);
  put_u32(out, 0);
  put_u32(out, 0);
  put_u32(out, snaplen);
  put_u32(out, kLinkTypeEthernet);
  for (const auto& f : frames) {
    if (f.timestamp_ns / 1'000'000'000ull > 0xFFFFFFFFull) throw FormatError("pcap: timestamp beyond 32-bit seconds");
    put_u32(out, static_cast<std::uint32_t>(f.timestamp_ns / 1'000'000'000ull));
    put_u32(out, static_cast<std::uint32_t>(f.timestamp_ns % 1'000'000'000ull));
    put_u32(out, static_cast<std::uint32_t>(f.data.size()));
    put_u32(out, f.orig_len ? f.orig_len : static_cast<std::uint32_t>(f.data.size()));
    out.insert(out.end(), f.data.begin(), f.data.end());
  }
  return out;
}

std::vector<PcapFrame> read_pcap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_pcap(bytes);
}

void write_pcap(const std::filesystem::path& path, std::span<const PcapFrame> frames) {
  const auto bytes = encode_pcap(frames);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace kscope
