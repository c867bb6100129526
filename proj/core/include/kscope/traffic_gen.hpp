#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kscope/pcap.hpp"
#include "kscope/traffic.hpp"

namespace kscope {

// Flows start at flow_rate_fps, burst_size flows at a time; packets of a flow are
// packet_gap_ns apart. Packet counts and payload sizes are uniform in their ranges.
struct TrafficProfile {
  std::size_t flows = 100;
  double elephant_fraction = 0.0;
  std::uint32_t mouse_packets_min = 1;
  std::uint32_t mouse_packets_max = 1;
  std::uint32_t elephant_packets_min = 16;
  std::uint32_t elephant_packets_max = 16;
  std::uint32_t mouse_payload_min = 0;
  std::uint32_t mouse_payload_max = 64;
  std::uint32_t elephant_payload_min = 0;
  std::uint32_t elephant_payload_max = 64;
  double flow_rate_fps = 1e5;
  std::size_t burst_size = 1;
  bool poisson = false;  // exponential gaps between bursts instead of uniform spacing
  std::uint64_t packet_gap_ns = 1000;
  double udp_fraction = 0.2;
  // Give every flow its own flow-table index so no two flows collide.
  bool distinct_table_index = true;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument.
  void check() const;

  // ~10% of flows (>= 16 packets) carrying ~90% of bytes.
  static TrafficProfile iscx_like(std::size_t flows, double flow_rate_fps = 1e5, std::uint64_t seed = 1);
  // Single-packet flows at a fixed rate.
  static TrafficProfile uniform(std::size_t flows, double flow_rate_fps, std::uint64_t seed = 1);
};

struct TrafficStats {
  std::uint64_t flows = 0;
  std::uint64_t packets = 0;
  std::uint64_t bytes = 0;
  std::uint64_t elephant_flows = 0;  // flows with at least `threshold` packets
  std::uint64_t elephant_bytes = 0;
  std::uint64_t duration_ns = 0;
  double elephant_flow_share = 0;
  double elephant_byte_share = 0;
};

struct GeneratedTrace {
  std::vector<PcapFrame> frames;
  TrafficStats stats;
};

GeneratedTrace gen_traffic(const TrafficProfile& profile);

// Flow statistics recomputed from parsed frames, keyed by five-tuple.
TrafficStats trace_stats(std::span<const PcapFrame> frames, std::uint32_t threshold = kElephantThreshold);

// Ethernet + IPv4 + TCP/UDP frame carrying `payload`.
std::vector<std::uint8_t> build_frame(const FiveTuple& t, std::span<const std::uint8_t> payload);

}  // namespace kscope
