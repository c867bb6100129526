#include "kscope/report.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <sstream>

namespace kscope {

namespace {

using nlohmann::ordered_json;

std::string_view path_name(InferencePath p) { return p == InferencePath::fast ? "fast" : "slow"; }

template <typename T>
ordered_json opt(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

template <typename T>
std::string cell(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) return fmt::format("{:.3f}", *v);
  else return fmt::format("{}", *v);
}

ordered_json latency_json(const LatencyStats& s) {
  return {{"count", s.count},          {"mean_ns", s.mean_ns}, {"p50_ns", s.p50_ns},
          {"p90_ns", s.p90_ns},        {"p99_ns", s.p99_ns},   {"max_ns", s.max_ns},
          {"mean_wait_ns", s.mean_wait_ns}};
}

std::string ip_text(std::uint32_t ip) {
  return fmt::format("{}.{}.{}.{}", ip >> 24, (ip >> 16) & 0xFF, (ip >> 8) & 0xFF, ip & 0xFF);
}

}  // namespace

std::string report_json(const SimReport& rep, bool with_records) {
  ordered_json j;
  j["schema"] = "kscope.sim_report/1";
  j["config"] = {{"name", rep.config_name},
                 {"fpes", rep.fpes},
                 {"hpes", 1},
                 {"freq_hz", rep.freq_hz},
                 {"dataplane_hz", rep.dataplane_hz},
                 {"threshold_packets", rep.threshold},
                 {"queue_depth", rep.queue_depth},
                 {"timing_only", rep.timing_only},
                 {"unchecked", rep.unchecked},
                 {"fast_program_fnv1a", fmt::format("{:08x}", rep.fast_program_hash)},
                 {"slow_program_fnv1a", fmt::format("{:08x}", rep.slow_program_hash)},
                 {"fast_bundles", rep.fast_bundles},
                 {"slow_bundles", rep.slow_bundles}};
  j["traffic"] = {{"frames", rep.frames},
                  {"parsed", rep.parsed},
                  {"skipped_not_ipv4", rep.skipped_not_ipv4},
                  {"skipped_truncated", rep.skipped_truncated},
                  {"flows", rep.flows.size()},
                  {"wire_bytes", rep.wire_bytes},
                  {"trace_duration_ns", rep.trace_duration_ns}};
  j["dispatch"] = {{"fast_dispatches", rep.fast_dispatches},
                   {"slow_dispatches", rep.slow_dispatches},
                   {"flow_table_collisions", rep.flow_table_collisions},
                   {"query_table_collisions", rep.query_table_collisions}};
  ordered_json queues = ordered_json::array();
  for (const auto& q : rep.queues) {
    queues.push_back({{"name", q.name},
                      {"enqueued", q.enqueued},
                      {"dropped", q.dropped},
                      {"max_occupancy", q.max_occupancy},
                      {"inferences", q.inferences},
                      {"busy_cycles", q.busy_cycles},
                      {"faults", q.faults}});
  }
  j["queues"] = queues;
  j["inference"] = {{"completed", rep.completed},
                    {"dropped", rep.dropped},
                    {"faults", rep.faults},
                    {"stall_cycles", rep.stall_cycles},
                    {"raw_hazards", rep.raw_hazards},
                    {"makespan_cycles", rep.makespan_cycles},
                    {"makespan_ns", rep.makespan_ns},
                    {"throughput_fps", rep.throughput_fps},
                    {"throughput_mips", rep.throughput_mips},
                    {"throughput_gbps", rep.throughput_gbps}};
  j["latency"] = {{"fast", latency_json(rep.fast_latency)}, {"slow", latency_json(rep.slow_latency)}};
  j["dataplane"] = {{"forwarded_packets", rep.forwarded_packets},
                    {"query_cycles_per_packet", rep.query_cycles_per_packet},
                    {"query_latency_ns_per_packet", rep.query_latency_ns_per_packet},
                    {"query_cycles_total", rep.query_cycles_total},
                    {"labeled_packets", rep.labeled_packets}};
  if (with_records) {
    ordered_json flows = ordered_json::array();
    for (const auto& f : rep.flows) {
      flows.push_back({{"flow_hash", fmt::format("{:08x}", f.flow_hash)},
                       {"packets", f.packets},
                       {"bytes", f.bytes},
                       {"fast_label", opt(f.fast_label)},
                       {"slow_label", opt(f.slow_label)},
                       {"final_label", opt(f.final_label)},
                       {"fast_latency_ns", opt(f.fast_latency_ns)},
                       {"slow_latency_ns", opt(f.slow_latency_ns)},
                       {"labeled_packets", f.labeled_packets}});
    }
    j["flows"] = flows;
    ordered_json infs = ordered_json::array();
    for (const auto& r : rep.inferences) {
      infs.push_back({{"id", r.id},
                      {"flow_hash", fmt::format("{:08x}", r.flow_hash)},
                      {"path", path_name(r.path)},
                      {"pe", r.pe},
                      {"dropped", r.dropped},
                      {"arrival_cycle", r.arrival_cycle},
                      {"start_cycle", r.start_cycle},
                      {"complete_cycle", r.complete_cycle},
                      {"pe_cycles", r.pe_cycles},
                      {"latency_ns", r.dropped ? ordered_json(nullptr) : ordered_json(rep.latency_ns(r))},
                      {"label", opt(r.label)},
                      {"fault", opt(r.fault)}});
    }
    j["inferences"] = infs;
  }
  return j.dump(2) + "\n";
}

std::string flows_csv(const SimReport& rep) {
  std::ostringstream os;
  os << "flow_hash,src_ip,dst_ip,src_port,dst_port,protocol,packets,bytes,fast_label,slow_label,final_label,"
        "fast_latency_ns,slow_latency_ns,labeled_packets\n";
  for (const auto& f : rep.flows) {
    os << fmt::format("{:08x},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", f.flow_hash, ip_text(f.tuple.src_ip),
                      ip_text(f.tuple.dst_ip), f.tuple.src_port, f.tuple.dst_port, f.tuple.protocol, f.packets,
                      f.bytes, cell(f.fast_label), cell(f.slow_label), cell(f.final_label), cell(f.fast_latency_ns),
                      cell(f.slow_latency_ns), f.labeled_packets);
  }
  return os.str();
}

std::string inferences_csv(const SimReport& rep) {
  std::ostringstream os;
  os << "id,flow_hash,path,pe,dropped,arrival_cycle,start_cycle,complete_cycle,pe_cycles,latency_ns,label,fault\n";
  for (const auto& r : rep.inferences) {
    std::string fault = r.fault.value_or("");
    for (char& c : fault) {
      if (c == ',' || c == '\n') c = ';';
    }
    const std::optional<double> lat = r.dropped ? std::nullopt : std::optional(rep.latency_ns(r));
    os << fmt::format("{},{:08x},{},{},{},{},{},{},{},{},{},{}\n", r.id, r.flow_hash, path_name(r.path), r.pe,
                      r.dropped ? 1 : 0, r.arrival_cycle, r.start_cycle, r.complete_cycle, r.pe_cycles, cell(lat),
                      cell(r.label), fault);
  }
  return os.str();
}

std::string report_summary(const SimReport& rep) {
  std::string s;
  s += fmt::format("config {}: {} FPE + 1 HPE at {} Hz, threshold {}, queue depth {}\n", rep.config_name, rep.fpes,
                   rep.freq_hz, rep.threshold, rep.queue_depth);
  s += fmt::format("traffic: {} frames, {} parsed, {} skipped, {} flows\n", rep.frames, rep.parsed,
                   rep.skipped_not_ipv4 + rep.skipped_truncated, rep.flows.size());
  s += fmt::format("dispatch: {} fast, {} slow, {} collisions\n", rep.fast_dispatches, rep.slow_dispatches,
                   rep.flow_table_collisions);
  s += fmt::format("inference: {} completed, {} dropped, {} faults, {} stall cycles\n", rep.completed, rep.dropped,
                   rep.faults, rep.stall_cycles);
  s += fmt::format("latency fast: p50 {:.1f} ns, p99 {:.1f} ns, max {:.1f} ns\n", rep.fast_latency.p50_ns,
                   rep.fast_latency.p99_ns, rep.fast_latency.max_ns);
  if (rep.slow_latency.count) {
    s += fmt::format("latency slow: p50 {:.1f} ns, p99 {:.1f} ns, max {:.1f} ns\n", rep.slow_latency.p50_ns,
                     rep.slow_latency.p99_ns, rep.slow_latency.max_ns);
  }
  s += fmt::format("throughput: {:.1f} fps, {:.3f} MIPS, {:.3f} Gbps\n", rep.throughput_fps, rep.throughput_mips,
                   rep.throughput_gbps);
  s += fmt::format("dataplane: {} packets, {} query cycles each ({:.2f} ns)\n", rep.forwarded_packets,
                   rep.query_cycles_per_packet, rep.query_latency_ns_per_packet);
  return s;
}

}  // namespace kscope
