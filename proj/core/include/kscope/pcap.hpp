#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace kscope {

struct PcapFrame {
  std::uint64_t timestamp_ns = 0;
  std::uint32_t orig_len = 0;  // length on the wire; data may be shorter when captured with a snaplen
  std::vector<std::uint8_t> data;
  friend bool operator==(const PcapFrame&, const PcapFrame&) = default;
};

constexpr std::uint32_t kPcapMagicMicro = 0xA1B2C3D4;
constexpr std::uint32_t kPcapMagicNano = 0xA1B23C4D;
constexpr std::uint32_t kLinkTypeEthernet = 1;

// Accepts both byte orders of the microsecond and nanosecond variants. Throws FormatError.
std::vector<PcapFrame> decode_pcap(std::span<const std::uint8_t> bytes);
// Little-endian, nanosecond variant, Ethernet link type.
std::vector<std::uint8_t> encode_pcap(std::span<const PcapFrame> frames, std::uint32_t snaplen = 65535);

std::vector<PcapFrame> read_pcap(const std::filesystem::path& path);
void write_pcap(const std::filesystem::path& path, std::span<const PcapFrame> frames);

}  // namespace kscope
