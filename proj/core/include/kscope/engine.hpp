#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kscope/fpe_sim.hpp"
#include "kscope/hpe_sim.hpp"
#include "kscope/isa.hpp"
#include "kscope/pcap.hpp"
#include "kscope/traffic.hpp"

namespace kscope {

struct EngineConfig {
  std::string name = "custom";
  std::size_t fpes = 1;
  std::uint64_t freq_hz = 250'000'000;  // PE clock, whole Hz
  double dataplane_hz = kDataPlaneHz;
  std::uint32_t threshold = kElephantThreshold;
  std::size_t queue_depth = kQueueDepth;
  FpeConfig fpe;
  HpeConfig hpe;
  ProgramImage fast;  // FPE target
  ProgramImage slow;  // HPE target
  // Cycles come from one probe inference per program; labels are not computed.
  bool timing_only = false;
  // Load programs without validation; violations surface as per-inference PE faults.
  bool unchecked = false;
  std::size_t threads = 0;  // 0: hardware concurrency

  // kbase | k4fpe | k8fpe (FPGA clocks) and the same names with an -asic suffix.
  static EngineConfig preset(std::string_view name);
  static std::vector<std::string> preset_names();
  // Throws std::invalid_argument on bad parameters; ValidationError / CapacityError on programs.
  void check() const;
};

struct InferenceRecord {
  std::size_t id = 0;
  std::uint32_t flow_hash = 0;
  InferencePath path = InferencePath::fast;
  std::size_t pe = 0;  // FPE index; 0 for the HPE
  bool dropped = false;
  std::uint64_t arrival_cycle = 0;
  std::uint64_t start_cycle = 0;
  std::uint64_t complete_cycle = 0;
  std::uint64_t pe_cycles = 0;
  std::optional<std::uint16_t> label;
  std::optional<std::string> fault;
  std::uint64_t latency_cycles() const { return complete_cycle - arrival_cycle; }
  std::uint64_t wait_cycles() const { return start_cycle - arrival_cycle; }
};

struct FlowRecord {
  std::uint32_t flow_hash = 0;
  FiveTuple tuple;
  std::uint64_t packets = 0;
  std::uint64_t bytes = 0;
  std::optional<std::size_t> fast_id;  // index into SimReport::inferences
  std::optional<std::size_t> slow_id;
  std::optional<std::uint16_t> fast_label;
  std::optional<std::uint16_t> slow_label;
  std::optional<std::uint16_t> final_label;  // query-table entry after the run
  std::optional<double> fast_latency_ns;
  std::optional<double> slow_latency_ns;
  std::uint64_t labeled_packets = 0;  // packets whose query found a label
};

struct QueueStats {
  std::string name;  // fpe0.. | hpe
  std::uint64_t enqueued = 0;
  std::uint64_t dropped = 0;
  std::size_t max_occupancy = 0;
  std::uint64_t inferences = 0;
  std::uint64_t busy_cycles = 0;
  std::uint64_t faults = 0;
};

struct LatencyStats {
  std::uint64_t count = 0;
  double mean_ns = 0;
  double p50_ns = 0;
  double p90_ns = 0;
  double p99_ns = 0;
  double max_ns = 0;
  double mean_wait_ns = 0;
};

struct SimReport {
  // Config echo.
  std::string config_name;
  std::size_t fpes = 0;
  std::uint64_t freq_hz = 0;
  double dataplane_hz = 0;
  std::uint32_t threshold = 0;
  std::size_t queue_depth = 0;
  bool timing_only = false;
  bool unchecked = false;
  std::uint32_t fast_program_hash = 0;
  std::uint32_t slow_program_hash = 0;
  std::size_t fast_bundles = 0;
  std::size_t slow_bundles = 0;

  // Traffic.
  std::uint64_t frames = 0;
  std::uint64_t parsed = 0;
  std::uint64_t skipped_not_ipv4 = 0;
  std::uint64_t skipped_truncated = 0;
  std::uint64_t wire_bytes = 0;
  std::uint64_t trace_duration_ns = 0;

  // Dispatch.
  std::uint64_t fast_dispatches = 0;
  std::uint64_t slow_dispatches = 0;
  std::uint64_t flow_table_collisions = 0;
  std::uint64_t query_table_collisions = 0;
  std::vector<QueueStats> queues;  // FPEs then the HPE

  // Inference.
  std::uint64_t completed = 0;
  std::uint64_t dropped = 0;
  std::uint64_t faults = 0;
  std::uint64_t stall_cycles = 0;
  std::uint64_t raw_hazards = 0;
  std::uint64_t makespan_cycles = 0;  // first arrival to last completion
  double makespan_ns = 0;
  double throughput_fps = 0;   // completed fast inferences per second of makespan
  double throughput_mips = 0;  // all completed inferences, millions per second
  double throughput_gbps = 0;  // parsed wire bits per second of makespan
  LatencyStats fast_latency;
  LatencyStats slow_latency;

  // Data plane: forwarding is line rate apart from the query charge.
  std::uint64_t forwarded_packets = 0;
  std::uint32_t query_cycles_per_packet = kQueryCycles;
  double query_latency_ns_per_packet = 0;
  std::uint64_t query_cycles_total = 0;
  std::uint64_t labeled_packets = 0;

  std::vector<InferenceRecord> inferences;  // dispatch order
  std::vector<FlowRecord> flows;            // first-appearance order

  double latency_ns(const InferenceRecord& r) const;
  const FlowRecord* flow(std::uint32_t hash) const;
};

struct RunOptions {
  std::ostream* trace = nullptr;  // PE debug trace; forces single-threaded inference
};

SimReport run_trace(const EngineConfig& cfg, std::span<const PcapFrame> frames, const RunOptions& opts = {});
// Throws std::runtime_error / FormatError on an unreadable trace.
SimReport run_trace(const EngineConfig& cfg, const std::string& pcap_path, const RunOptions& opts = {});

// Modeled data-plane forwarding latency of one packet: only the query charge.
inline double forwarding_latency_ns(double dataplane_hz = kDataPlaneHz) { return query_charge_ns(dataplane_hz); }

struct PeakOptions {
  std::size_t flows = 20000;       // uniform 1-packet flows, fast path only
  std::uint32_t resolution = 256;  // inter-arrival steps per PE cycle
};

struct PeakResult {
  double peak_fps = 0;     // achieved inference throughput at the highest zero-drop rate
  double offered_fps = 0;  // offered flow rate at that point
  std::uint64_t period_steps = 0;  // inter-arrival time in 1/resolution cycles
  std::uint64_t service_cycles = 0;
  std::uint64_t makespan_cycles = 0;
  std::size_t probes = 0;
};

// Binary search over a uniform arrival period for the highest flow rate with zero
// inference-path drops. Works in PE cycles, so results scale exactly with freq_hz.
PeakResult peak_search(const EngineConfig& cfg, const PeakOptions& opts = {});

}  // namespace kscope
