#include "kscope/traffic.hpp"

#include <algorithm>
#include <stdexcept>

namespace kscope {

namespace {

std::uint16_t be16(std::span<const std::uint8_t> b, std::size_t pos) {
  return static_cast<std::uint16_t>((b[pos] << 8) | b[pos + 1]);
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t pos) {
  return (static_cast<std::uint32_t>(be16(b, pos)) << 16) | be16(b, pos + 2);
}

constexpr std::uint8_t kTcp = 6;
constexpr std::uint8_t kUdp = 17;

}  // namespace

const std::array<std::uint8_t, 40> kRssKey = {
    0x6d, 0x5a, 0x56, 0xda, 0x25, 0x5b, 0x0e, 0xc2, 0x41, 0x67, 0x25, 0x3d, 0x43, 0xa3,
    0x8f, 0xb0, 0xd0, 0xca, 0x2b, 0xcb, 0xae, 0x7b, 0x30, 0xb4, 0x77, 0xcb, 0x2d, 0xa3,
    0x80, 0x30, 0xf2, 0x0c, 0x6a, 0x42, 0xb7, 0x3b, 0xbe, 0xac, 0x01, 0xfa};

ParseOutcome parse_packet(std::span<const std::uint8_t> frame, std::uint64_t timestamp_ns, std::uint32_t wire_len) {
  ParseOutcome out;
  out.reason = SkipReason::truncated;
  if (frame.size() < 14) return out;
  std::size_t pos = 12;
  std::uint16_t ethertype = be16(frame, pos);
  pos += 2;
  if (ethertype == 0x8100) {
    if (frame.size() < pos + 4) return out;
    ethertype = be16(frame, pos + 2);
    pos += 4;
  }
  if (ethertype != 0x0800) {
    out.reason = SkipReason::not_ipv4;
    return out;
  }
  if (frame.size() < pos + 20) return out;
  const std::size_t ip = pos;
  if ((frame[ip] >> 4) != 4) {
    out.reason = SkipReason::not_ipv4;
    return out;
  }
  const std::size_t ihl = static_cast<std::size_t>(frame[ip] & 0x0F) * 4;
  const std::size_t total = be16(frame, ip + 2);
  if (ihl < 20 || frame.size() < ip + ihl) return out;
  // Ethernet padding after the IP datagram is not payload.
  const std::size_t end = std::min(frame.size(), std::max(ip + ihl, ip + total));

  PacketRecord p;
  p.timestamp_ns = timestamp_ns;
  p.wire_len = wire_len ? wire_len : static_cast<std::uint32_t>(frame.size());
  p.tuple.protocol = frame[ip + 9];
  p.tuple.src_ip = be32(frame, ip + 12);
  p.tuple.dst_ip = be32(frame, ip + 16);
  std::size_t payload = ip + ihl;
  const bool first_fragment = (be16(frame, ip + 6) & 0x1FFF) == 0;
  if (first_fragment && (p.tuple.protocol == kTcp || p.tuple.protocol == kUdp)) {
    const std::size_t l4 = p.tuple.protocol == kTcp ? 20 : 8;
    if (end < payload + l4) return out;
    p.tuple.src_port = be16(frame, payload);
    p.tuple.dst_port = be16(frame, payload + 2);
    const std::size_t hdr = p.tuple.protocol == kTcp ? static_cast<std::size_t>(frame[payload + 12] >> 4) * 4 : 8;
    if (hdr < l4 || end < payload + hdr) return out;
    payload += hdr;
  }
  p.raw_input[0] = static_cast<std::uint8_t>(p.tuple.src_port >> 8);
  p.raw_input[1] = static_cast<std::uint8_t>(p.tuple.src_port);
  p.raw_input[2] = static_cast<std::uint8_t>(p.tuple.dst_port >> 8);
  p.raw_input[3] = static_cast<std::uint8_t>(p.tuple.dst_port);
  p.raw_input[4] = p.tuple.protocol;
  const std::size_t n = std::min(kRawInputBytes - kRawHeaderBytes, end > payload ? end - payload : 0);
  std::copy_n(frame.begin() + static_cast<std::ptrdiff_t>(payload), n, p.raw_input.begin() + kRawHeaderBytes);
  out.packet = p;
  return out;
}

std::uint32_t toeplitz_hash(std::span<const std::uint8_t> input, std::span<const std::uint8_t> key) {
  std::uint32_t result = 0;
  // 32-bit window of the key aligned with the current input bit.
  std::uint32_t window = 0;
  for (std::size_t i = 0; i < 4 && i < key.size(); ++i) window |= static_cast<std::uint32_t>(key[i]) << (24 - 8 * i);
  std::size_t next = 4;
  for (const std::uint8_t byte : input) {
    const std::uint8_t k = next < key.size() ? key[next] : 0;
    ++next;
    for (int bit = 7; bit >= 0; --bit) {
      if ((byte >> bit) & 1) result ^= window;
      window = (window << 1) | ((k >> bit) & 1);
    }
  }
  return result;
}

std::uint32_t flow_hash(const FiveTuple& t) {
  const std::array<std::uint8_t, 12> in = {
      static_cast<std::uint8_t>(t.src_ip >> 24), static_cast<std::uint8_t>(t.src_ip >> 16),
      static_cast<std::uint8_t>(t.src_ip >> 8),  static_cast<std::uint8_t>(t.src_ip),
      static_cast<std::uint8_t>(t.dst_ip >> 24), static_cast<std::uint8_t>(t.dst_ip >> 16),
      static_cast<std::uint8_t>(t.dst_ip >> 8),  static_cast<std::uint8_t>(t.dst_ip),
      static_cast<std::uint8_t>(t.src_port >> 8), static_cast<std::uint8_t>(t.src_port),
      static_cast<std::uint8_t>(t.dst_port >> 8), static_cast<std::uint8_t>(t.dst_port)};
  return toeplitz_hash(in);
}

TrafficMonitor::TrafficMonitor(std::uint32_t threshold) : threshold_(threshold), table_(kFlowTableSize) {
  if (threshold == 0) throw std::invalid_argument("elephant threshold must be positive");
}

DispatchDecision TrafficMonitor::update(std::uint32_t hash) {
  FlowEntry& e = table_[table_index(hash)];
  ++counters_.packets;
  if (e.valid && e.key_hash != hash) {
    ++counters_.collisions;
    e = FlowEntry{};
  }
  DispatchDecision d;
  if (!e.valid) {
    e.valid = true;
    e.key_hash = hash;
    e.first_seen = true;
    d.fast = true;
  } else {
    e.first_seen = false;
  }
  ++e.packet_count;
  if (e.packet_count == threshold_ && !e.elephant_dispatched) {
    e.elephant_dispatched = true;
    d.slow = true;
  }
  counters_.fast_dispatches += d.fast;
  counters_.slow_dispatches += d.slow;
  return d;
}

bool FifoQueue::push(const InferenceRequest& r) {
  if (q_.size() >= depth_) {
    ++dropped_;
    return false;
  }
  q_.push_back(r);
  ++enqueued_;
  max_occupancy_ = std::max(max_occupancy_, q_.size());
  return true;
}

std::optional<InferenceRequest> FifoQueue::pop() {
  if (q_.empty()) return std::nullopt;
  InferenceRequest r = q_.front();
  q_.pop_front();
  return r;
}

QueryTable::QueryTable() : table_(kFlowTableSize) {}

void QueryTable::write(std::uint32_t hash, std::uint16_t label, InferencePath source, std::uint64_t cycle) {
  QueryEntry& e = table_[table_index(hash)];
  if (e.valid && e.key_hash == hash && e.source == InferencePath::slow && source == InferencePath::fast) return;
  if (e.valid && e.key_hash != hash) ++collisions_;
  e = QueryEntry{true, hash, label, source, cycle};
}

QueryResult QueryTable::query(std::uint32_t hash) const {
  const QueryEntry& e = table_[table_index(hash)];
  QueryResult r;
  if (e.valid) {
    r.label = e.label;
    r.source = e.source;
  }
  return r;
}

}  // namespace kscope
