#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace kscope {

struct FiveTuple {
  std::uint32_t src_ip = 0;
  std::uint32_t dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;
  friend bool operator==(const FiveTuple&, const FiveTuple&) = default;
};

constexpr std::size_t kRawInputBytes = 64;
constexpr std::size_t kRawHeaderBytes = 5;

// raw_input = src_port(2) | dst_port(2) | protocol(1) | first 59 payload bytes, zero padded.
// The 32-byte variant (27 payload bytes) is its prefix.
struct PacketRecord {
  std::uint64_t timestamp_ns = 0;
  FiveTuple tuple;
  std::uint32_t wire_len = 0;
  std::array<std::uint8_t, kRawInputBytes> raw_input{};

  std::span<const std::uint8_t> input(std::size_t len) const { return std::span(raw_input).first(len); }
};

enum class SkipReason : std::uint8_t { not_ipv4, truncated };

struct ParseOutcome {
  std::optional<PacketRecord> packet;
  SkipReason reason = SkipReason::not_ipv4;  // meaningful when packet is empty
};

// Ethernet II (optionally one 802.1Q tag) + IPv4; TCP/UDP ports, other protocols carry port 0.
ParseOutcome parse_packet(std::span<const std::uint8_t> frame, std::uint64_t timestamp_ns,
                          std::uint32_t wire_len = 0);

// Microsoft RSS verification key.
extern const std::array<std::uint8_t, 40> kRssKey;

std::uint32_t toeplitz_hash(std::span<const std::uint8_t> input, std::span<const std::uint8_t> key = kRssKey);
// Toeplitz over src_ip | dst_ip | src_port | dst_port in network byte order.
std::uint32_t flow_hash(const FiveTuple& t);

constexpr std::size_t kFlowTableSize = 65536;
constexpr std::uint32_t kElephantThreshold = 16;

inline std::size_t table_index(std::uint32_t hash) { return hash % kFlowTableSize; }

struct FlowEntry {
  bool valid = false;
  std::uint32_t key_hash = 0;
  std::uint32_t packet_count = 0;
  bool first_seen = false;
  bool elephant_dispatched = false;
};

struct DispatchDecision {
  bool fast = false;  // first packet of the flow
  bool slow = false;  // packet count reached the threshold
};

struct MonitorCounters {
  std::uint64_t packets = 0;
  std::uint64_t fast_dispatches = 0;
  std::uint64_t slow_dispatches = 0;
  std::uint64_t collisions = 0;
};

// Flow table with last-writer-wins on index collisions; no eviction.
class TrafficMonitor {
 public:
  explicit TrafficMonitor(std::uint32_t threshold = kElephantThreshold);

  DispatchDecision update(std::uint32_t hash);
  DispatchDecision update(const PacketRecord& pkt) { return update(flow_hash(pkt.tuple)); }

  const FlowEntry& entry(std::uint32_t hash) const { return table_[table_index(hash)]; }
  const MonitorCounters& counters() const { return counters_; }
  std::uint32_t threshold() const { return threshold_; }

 private:
  std::uint32_t threshold_;
  std::vector<FlowEntry> table_;
  MonitorCounters counters_;
};

enum class InferencePath : std::uint8_t { fast, slow };

struct InferenceRequest {
  std::uint32_t flow_hash = 0;
  InferencePath path = InferencePath::fast;
  std::uint64_t enqueue_cycle = 0;
  std::size_t id = 0;  // index into the engine's dispatch list
};

constexpr std::size_t kQueueDepth = 512;

class FifoQueue {
 public:
  explicit FifoQueue(std::size_t depth = kQueueDepth) : depth_(depth) {}

  // False (and a drop counted) when full.
  bool push(const InferenceRequest& r);
  std::optional<InferenceRequest> pop();
  std::size_t size() const { return q_.size(); }
  bool empty() const { return q_.empty(); }
  std::size_t depth() const { return depth_; }
  std::uint64_t enqueued() const { return enqueued_; }
  std::uint64_t dropped() const { return dropped_; }
  std::size_t max_occupancy() const { return max_occupancy_; }

 private:
  std::size_t depth_;
  std::deque<InferenceRequest> q_;
  std::uint64_t enqueued_ = 0;
  std::uint64_t dropped_ = 0;
  std::size_t max_occupancy_ = 0;
};

struct QueryEntry {
  bool valid = false;
  std::uint32_t key_hash = 0;
  std::uint16_t label = 0;
  InferencePath source = InferencePath::fast;
  std::uint64_t result_cycle = 0;
};

constexpr std::uint32_t kQueryCycles = 5;
constexpr double kDataPlaneHz = 322e6;

inline double query_charge_ns(double dataplane_hz = kDataPlaneHz) { return kQueryCycles / dataplane_hz * 1e9; }

struct QueryResult {
  std::optional<std::uint16_t> label;
  InferencePath source = InferencePath::fast;
  std::uint32_t added_cycles = kQueryCycles;
};

class QueryTable {
 public:
  QueryTable();

  // A slow result replaces a fast one for the same flow, never the reverse; a different
  // flow at the same index replaces the entry (counted as a collision).
  void write(std::uint32_t hash, std::uint16_t label, InferencePath source, std::uint64_t cycle);
  QueryResult query(std::uint32_t hash) const;
  QueryResult query(const FiveTuple& t) const { return query(flow_hash(t)); }

  const QueryEntry& entry(std::uint32_t hash) const { return table_[table_index(hash)]; }
  std::uint64_t collisions() const { return collisions_; }

 private:
  std::vector<QueryEntry> table_;
  std::uint64_t collisions_ = 0;
};

}  // namespace kscope
