#include "kscope/traffic_gen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace kscope {

namespace {

// Plain modulo draws keep the byte stream identical across standard libraries.
std::uint64_t draw(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); }

double unit(std::mt19937_64& rng) { return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53; }

void put16(std::vector<std::uint8_t>& b, std::size_t pos, std::uint16_t v) {
  b[pos] = static_cast<std::uint8_t>(v >> 8);
  b[pos + 1] = static_cast<std::uint8_t>(v);
}

void put32(std::vector<std::uint8_t>& b, std::size_t pos, std::uint32_t v) {
  put16(b, pos, static_cast<std::uint16_t>(v >> 16));
  put16(b, pos + 2, static_cast<std::uint16_t>(v));
}

struct Flow {
  FiveTuple tuple;
  std::uint64_t start_ns = 0;
  std::uint32_t packets = 0;
  bool elephant = false;
};

}  // namespace

void TrafficProfile::check() const {
  if (flows == 0) throw std::invalid_argument("flows must be positive");
  if (elephant_fraction < 0 || elephant_fraction > 1) throw std::invalid_argument("elephant_fraction must be in [0, 1]");
  if (mouse_packets_min == 0 || mouse_packets_min > mouse_packets_max) throw std::invalid_argument("bad mouse packet range");
  if (elephant_packets_min == 0 || elephant_packets_min > elephant_packets_max) {
    throw std::invalid_argument("bad elephant packet range");
  }
  if (mouse_payload_min > mouse_payload_max || elephant_payload_min > elephant_payload_max ||
      std::max(mouse_payload_max, elephant_payload_max) > 1460) {
    throw std::invalid_argument("bad payload range (max 1460 bytes)");
  }
  if (!(flow_rate_fps > 0) || !std::isfinite(flow_rate_fps)) throw std::invalid_argument("flow_rate_fps must be positive");
  if (burst_size == 0) throw std::invalid_argument("burst_size must be positive");
  if (udp_fraction < 0 || udp_fraction > 1) throw std::invalid_argument("udp_fraction must be in [0, 1]");
  if (distinct_table_index && flows > kFlowTableSize) {
    throw std::invalid_argument("more flows than flow-table indices");
  }
}

TrafficProfile TrafficProfile::iscx_like(std::size_t flows, double flow_rate_fps, std::uint64_t seed) {
  TrafficProfile p;
  p.flows = flows;
  p.elephant_fraction = 0.10;
  p.mouse_packets_min = 1;
  p.mouse_packets_max = 8;
  p.elephant_packets_min = 40;
  p.elephant_packets_max = 96;
  p.mouse_payload_min = 40;
  p.mouse_payload_max = 200;
  p.elephant_payload_min = 600;
  p.elephant_payload_max = 1400;
  p.flow_rate_fps = flow_rate_fps;
  p.seed = seed;
  return p;
}

TrafficProfile TrafficProfile::uniform(std::size_t flows, double flow_rate_fps, std::uint64_t seed) {
  TrafficProfile p;
  p.flows = flows;
  p.flow_rate_fps = flow_rate_fps;
  p.seed = seed;
  return p;
}

std::vector<std::uint8_t> build_frame(const FiveTuple& t, std::span<const std::uint8_t> payload) {
  const bool tcp = t.protocol == 6;
  const std::size_t l4 = tcp ? 20 : 8;
  std::vector<std::uint8_t> f(14 + 20 + l4 + payload.size(), 0);
  // Locally administered MACs.
  f[0] = 0x02;
  f[6] = 0x02;
  put16(f, 12, 0x0800);
  const std::size_t ip = 14;
  f[ip] = 0x45;
  put16(f, ip + 2, static_cast<std::uint16_t>(20 + l4 + payload.size()));
  f[ip + 8] = 64;
  f[ip + 9] = t.protocol;
  put32(f, ip + 12, t.src_ip);
  put32(f, ip + 16, t.dst_ip);
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < 20; i += 2) sum += static_cast<std::uint32_t>((f[ip + i] << 8) | f[ip + i + 1]);
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  put16(f, ip + 10, static_cast<std::uint16_t>(~sum));
  const std::size_t l = ip + 20;
  put16(f, l, t.src_port);
  put16(f, l + 2, t.dst_port);
  if (tcp) {
    f[l + 12] = 0x50;
    f[l + 13] = 0x18;  // PSH | ACK
    put16(f, l + 14, 0xFFFF);
  } else {
    put16(f, l + 4, static_cast<std::uint16_t>(8 + payload.size()));
  }
  std::copy(payload.begin(), payload.end(), f.begin() + static_cast<std::ptrdiff_t>(l + l4));
  return f;
}

GeneratedTrace gen_traffic(const TrafficProfile& p) {
  p.check();
  std::mt19937_64 rng(p.seed);
  std::vector<Flow> flows(p.flows);

  const auto elephants = static_cast<std::size_t>(std::llround(p.elephant_fraction * static_cast<double>(p.flows)));
  std::vector<std::size_t> order(p.flows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw(rng, 0, i - 1)]);
  for (std::size_t i = 0; i < elephants; ++i) flows[order[i]].elephant = true;

  std::unordered_set<std::size_t> used;
  const double gap_ns = 1e9 / p.flow_rate_fps * static_cast<double>(p.burst_size);
  double t = 0;
  for (std::size_t i = 0; i < flows.size(); ++i) {
    Flow& f = flows[i];
    const bool udp = unit(rng) < p.udp_fraction;
    while (true) {
      f.tuple.src_ip = 0x0A000000u | static_cast<std::uint32_t>(draw(rng, 0, 0xFFFFFF));
      f.tuple.dst_ip = 0xC0A80000u | static_cast<std::uint32_t>(draw(rng, 0, 0xFFFF));
      f.tuple.src_port = static_cast<std::uint16_t>(draw(rng, 1024, 65535));
      f.tuple.dst_port = static_cast<std::uint16_t>(draw(rng, 1, 1023));
      f.tuple.protocol = udp ? 17 : 6;
      const std::size_t idx = table_index(flow_hash(f.tuple));
      if (!p.distinct_table_index || used.insert(idx).second) break;
    }
    f.packets = static_cast<std::uint32_t>(f.elephant ? draw(rng, p.elephant_packets_min, p.elephant_packets_max)
                                                      : draw(rng, p.mouse_packets_min, p.mouse_packets_max));
    if (i > 0 && i % p.burst_size == 0) t += p.poisson ? -std::log(unit(rng)) * gap_ns : gap_ns;
    f.start_ns = static_cast<std::uint64_t>(std::llround(t));
  }

  struct Pending {
    std::uint64_t ts;
    std::size_t flow;
    std::uint32_t seq;
  };
  std::vector<Pending> pending;
  for (std::size_t i = 0; i < flows.size(); ++i) {
    for (std::uint32_t k = 0; k < flows[i].packets; ++k) pending.push_back({flows[i].start_ns + k * p.packet_gap_ns, i, k});
  }
  std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) { return a.ts < b.ts; });

  GeneratedTrace out;
  out.frames.reserve(pending.size());
  // A per-flow signature prefix followed by per-packet bytes, from an independent stream.
  std::mt19937_64 payload_rng(p.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::array<std::uint8_t, 8>> signature(flows.size());
  for (auto& s : signature) {
    for (auto& b : s) b = static_cast<std::uint8_t>(payload_rng());
  }
  for (const auto& e : pending) {
    const Flow& f = flows[e.flow];
    const auto len = static_cast<std::size_t>(f.elephant ? draw(payload_rng, p.elephant_payload_min, p.elephant_payload_max)
                                                         : draw(payload_rng, p.mouse_payload_min, p.mouse_payload_max));
    std::vector<std::uint8_t> payload(len);
    for (std::size_t i = 0; i < len; ++i) {
      payload[i] = i < signature[e.flow].size() ? signature[e.flow][i] : static_cast<std::uint8_t>(payload_rng());
    }
    PcapFrame fr;
    fr.timestamp_ns = e.ts;
    fr.data = build_frame(f.tuple, payload);
    fr.orig_len = static_cast<std::uint32_t>(fr.data.size());
    out.frames.push_back(std::move(fr));
  }
  out.stats = trace_stats(out.frames);
  return out;
}

TrafficStats trace_stats(std::span<const PcapFrame> frames, std::uint32_t threshold) {
  struct Acc {
    std::uint64_t packets = 0;
    std::uint64_t bytes = 0;
  };
  auto key = [](const FiveTuple& t) {
    return std::tuple(t.src_ip, t.dst_ip, t.src_port, t.dst_port, t.protocol);
  };
  std::map<decltype(key(FiveTuple{})), Acc> flows;
  TrafficStats s;
  std::uint64_t first = UINT64_MAX, last = 0;
  for (const auto& f : frames) {
    const auto r = parse_packet(f.data, f.timestamp_ns, f.orig_len);
    if (!r.packet) continue;
    Acc& a = flows[key(r.packet->tuple)];
    ++a.packets;
    a.bytes += r.packet->wire_len;
    ++s.packets;
    s.bytes += r.packet->wire_len;
    first = std::min(first, f.timestamp_ns);
    last = std::max(last, f.timestamp_ns);
  }
  s.flows = flows.size();
  for (const auto& [k, a] : flows) {
    if (a.packets >= threshold) {
      ++s.elephant_flows;
      s.elephant_bytes += a.bytes;
    }
  }
  s.duration_ns = s.packets ? last - first : 0;
  s.elephant_flow_share = s.flows ? static_cast<double>(s.elephant_flows) / static_cast<double>(s.flows) : 0;
  s.elephant_byte_share = s.bytes ? static_cast<double>(s.elephant_bytes) / static_cast<double>(s.bytes) : 0;
  return s;
}

}  // namespace kscope
