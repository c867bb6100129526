#include "kscope/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "kscope/errors.hpp"
#include "kscope/model.hpp"

namespace kscope {

namespace {

struct Preset {
  std::string_view name;
  std::size_t fpes;
  std::uint64_t freq_hz;
};

constexpr Preset kPresets[] = {
    {"kbase", 1, 286'000'000},      {"k4fpe", 4, 250'000'000},      {"k8fpe", 8, 250'000'000},
    {"kbase-asic", 1, 870'000'000}, {"k4fpe-asic", 4, 833'000'000}, {"k8fpe-asic", 8, 800'000'000},
};

std::size_t input_len(const ProgramImage& img) {
  const auto s = img.start();
  if (!s) throw std::invalid_argument("program has no START");
  return s->in_len;
}

std::uint32_t program_hash(const ProgramImage& img) {
  const auto bytes = encode_binary(img);
  return fnv1a32(bytes);
}

struct Outcome {
  std::uint64_t cycles = 0;
  std::optional<std::uint16_t> label;
  std::optional<std::string> fault;
  std::uint64_t stalls = 0;
  std::uint64_t hazards = 0;
};

std::optional<std::uint16_t> label_of(const Fix8Vector& out) {
  if (out.size() == 0) return std::nullopt;
  return static_cast<std::uint16_t>(argmax(out));
}

// One PE of each kind; a worker thread owns one.
class Runner {
 public:
  explicit Runner(const EngineConfig& cfg) : cfg_(cfg), fpe_(cfg.fpe), hpe_(cfg.hpe) {}

  Outcome run(InferencePath path, std::span<const std::uint8_t> input, std::ostream* trace) {
    Outcome o;
    try {
      if (path == InferencePath::fast) {
        if (!fpe_.loaded()) cfg_.unchecked ? fpe_.load_unchecked(cfg_.fast) : fpe_.load_program(cfg_.fast);
        const FpeResult r = fpe_.run_inference(input, trace);
        o.cycles = r.cycles;
        o.hazards = r.raw_hazards;
        if (r.fault) o.fault = r.fault->message;
        else o.label = label_of(r.output);
      } else {
        if (!hpe_.loaded()) cfg_.unchecked ? hpe_.load_unchecked(cfg_.slow) : hpe_.load_program(cfg_.slow);
        const HpeResult r = hpe_.run_inference(input, trace);
        o.cycles = r.cycles;
        o.stalls = r.stall_cycles;
        if (r.fault) o.fault = r.fault->message;
        else o.label = label_of(r.output);
      }
    } catch (const std::exception& e) {
      o.fault = e.what();
    }
    return o;
  }

 private:
  const EngineConfig& cfg_;
  FpeSim fpe_;
  HpeSim hpe_;
};

struct PacketQuery {
  std::uint64_t cycle = 0;
  std::uint32_t hash = 0;
  std::size_t flow = 0;
};

// Event-driven queueing over PE cycles. At equal timestamps: completions (query-table
// writes), then packet queries, then arrivals, then idle PEs dequeue.
class Scheduler {
 public:
  Scheduler(std::size_t fpes, std::size_t depth) : fpes_(fpes), running_(fpes + 1) {
    for (std::size_t i = 0; i <= fpes; ++i) queues_.emplace_back(depth);
    stats_.resize(fpes + 1);
    for (std::size_t i = 0; i < fpes; ++i) stats_[i].name = "fpe" + std::to_string(i);
    stats_[fpes].name = "hpe";
  }

  void run(std::vector<InferenceRecord>& recs, std::span<const PacketQuery> queries, QueryTable* table,
           std::vector<FlowRecord>* flows) {
    std::vector<std::size_t> order(recs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (recs[a].arrival_cycle != recs[b].arrival_cycle) return recs[a].arrival_cycle < recs[b].arrival_cycle;
      if (recs[a].flow_hash != recs[b].flow_hash) return recs[a].flow_hash < recs[b].flow_hash;
      return a < b;
    });

    using Done = std::tuple<std::uint64_t, std::uint32_t, std::size_t>;
    std::priority_queue<Done, std::vector<Done>, std::greater<>> done;
    std::size_t ai = 0, qi = 0;
    constexpr std::uint64_t kNever = ~std::uint64_t{0};

    while (ai < order.size() || qi < queries.size() || !done.empty()) {
      std::uint64_t t = kNever;
      if (!done.empty()) t = std::get<0>(done.top());
      if (ai < order.size()) t = std::min(t, recs[order[ai]].arrival_cycle);
      if (qi < queries.size()) t = std::min(t, queries[qi].cycle);

      while (!done.empty() && std::get<0>(done.top()) == t) {
        const InferenceRecord& r = recs[std::get<2>(done.top())];
        done.pop();
        const std::size_t q = queue_of(r);
        running_[q].reset();
        if (table && r.label) table->write(r.flow_hash, *r.label, r.path, t);
      }
      for (; qi < queries.size() && queries[qi].cycle == t; ++qi) {
        if (table->query(queries[qi].hash).label) ++(*flows)[queries[qi].flow].labeled_packets;
      }
      for (; ai < order.size() && recs[order[ai]].arrival_cycle == t; ++ai) {
        InferenceRecord& r = recs[order[ai]];
        r.pe = r.path == InferencePath::fast ? pick_fpe() : 0;
        if (!queues_[queue_of(r)].push({r.flow_hash, r.path, t, order[ai]})) r.dropped = true;
      }
      for (std::size_t q = 0; q <= fpes_; ++q) {
        if (running_[q] || queues_[q].empty()) continue;
        const std::size_t id = queues_[q].pop()->id;
        InferenceRecord& r = recs[id];
        r.start_cycle = t;
        r.complete_cycle = t + r.pe_cycles;
        running_[q] = id;
        stats_[q].inferences += 1;
        stats_[q].busy_cycles += r.pe_cycles;
        stats_[q].faults += r.fault.has_value();
        done.emplace(r.complete_cycle, r.flow_hash, id);
      }
    }
    for (std::size_t q = 0; q <= fpes_; ++q) {
      stats_[q].enqueued = queues_[q].enqueued();
      stats_[q].dropped = queues_[q].dropped();
      stats_[q].max_occupancy = queues_[q].max_occupancy();
    }
  }

  const std::vector<QueueStats>& stats() const { return stats_; }

 private:
  std::size_t queue_of(const InferenceRecord& r) const { return r.path == InferencePath::fast ? r.pe : fpes_; }

  // Shortest FIFO; ties go to an idle PE, then the lowest index.
  std::size_t pick_fpe() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < fpes_; ++i) {
      const auto key = [&](std::size_t q) { return std::pair(queues_[q].size(), running_[q].has_value()); };
      if (key(i) < key(best)) best = i;
    }
    return best;
  }

  std::size_t fpes_;
  std::vector<FifoQueue> queues_;
  std::vector<std::optional<std::size_t>> running_;
  std::vector<QueueStats> stats_;
};

std::uint64_t to_cycles(std::uint64_t ns, std::uint64_t freq_hz) {
  constexpr std::uint64_t kNsPerSec = 1'000'000'000;
  return ns / kNsPerSec * freq_hz + (ns % kNsPerSec * freq_hz + kNsPerSec - 1) / kNsPerSec;
}

LatencyStats latency_stats(const SimReport& rep, InferencePath path) {
  std::vector<double> lat;
  double wait = 0;
  for (const auto& r : rep.inferences) {
    if (r.path != path || r.dropped) continue;
    lat.push_back(rep.latency_ns(r));
    wait += static_cast<double>(r.wait_cycles()) * 1e9 / static_cast<double>(rep.freq_hz);
  }
  LatencyStats s;
  s.count = lat.size();
  if (lat.empty()) return s;
  std::sort(lat.begin(), lat.end());
  const auto rank = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(lat.size())));
    return lat[std::max<std::size_t>(k, 1) - 1];
  };
  s.mean_ns = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
  s.mean_wait_ns = wait / static_cast<double>(lat.size());
  s.p50_ns = rank(0.50);
  s.p90_ns = rank(0.90);
  s.p99_ns = rank(0.99);
  s.max_ns = lat.back();
  return s;
}

void infer_all(const EngineConfig& cfg, std::vector<InferenceRecord>& recs,
               const std::vector<std::array<std::uint8_t, kRawInputBytes>>& inputs, std::vector<Outcome>& out,
               std::ostream* trace) {
  const std::size_t fast_len = input_len(cfg.fast);
  const std::size_t slow_len = input_len(cfg.slow);
  const auto input = [&](std::size_t i) {
    return std::span<const std::uint8_t>(inputs[i]).first(recs[i].path == InferencePath::fast ? fast_len : slow_len);
  };
  out.resize(recs.size());

  if (cfg.timing_only) {
    Runner probe(cfg);
    const std::vector<std::uint8_t> zeros(kRawInputBytes, 0);
    const Outcome fast = probe.run(InferencePath::fast, std::span(zeros).first(fast_len), nullptr);
    const Outcome slow = probe.run(InferencePath::slow, std::span(zeros).first(slow_len), nullptr);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      out[i] = recs[i].path == InferencePath::fast ? fast : slow;
      out[i].label.reset();
    }
    return;
  }

  if (trace) {
    Runner runner(cfg);
    for (std::size_t i = 0; i < recs.size(); ++i) out[i] = runner.run(recs[i].path, input(i), trace);
    return;
  }

  std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, recs.size() / 32 + 1);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    Runner runner(cfg);
    for (std::size_t i = next++; i < recs.size(); i = next++) out[i] = runner.run(recs[i].path, input(i), nullptr);
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
}

}  // namespace

EngineConfig EngineConfig::preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) {
      EngineConfig cfg;
      cfg.name = std::string(name);
      cfg.fpes = p.fpes;
      cfg.freq_hz = p.freq_hz;
      return cfg;
    }
  }
  throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> EngineConfig::preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

void EngineConfig::check() const {
  if (fpes == 0) throw std::invalid_argument("at least one FPE is required");
  if (freq_hz == 0 || freq_hz > 10'000'000'000) throw std::invalid_argument("freq_hz must be in (0, 10 GHz]");
  if (!(dataplane_hz > 0)) throw std::invalid_argument("dataplane_hz must be positive");
  if (threshold == 0) throw std::invalid_argument("threshold must be positive");
  if (queue_depth == 0) throw std::invalid_argument("queue depth must be positive");
  fpe.check();
  hpe.check();
  if (fast.target != Target::fpe) throw std::invalid_argument("fast program must target the FPE");
  if (slow.target != Target::hpe) throw std::invalid_argument("slow program must target the HPE");
  if (!unchecked) {
    require_valid(fast, fpe.limits());
    require_valid(slow, hpe.limits());
  }
  if (input_len(fast) > kRawInputBytes || input_len(slow) > kRawInputBytes) {
    throw std::invalid_argument("program input exceeds the 64-byte packet input");
  }
}

double SimReport::latency_ns(const InferenceRecord& r) const {
  return static_cast<double>(r.latency_cycles()) * 1e9 / static_cast<double>(freq_hz);
}

const FlowRecord* SimReport::flow(std::uint32_t hash) const {
  for (const auto& f : flows) {
    if (f.flow_hash == hash) return &f;
  }
  return nullptr;
}

SimReport run_trace(const EngineConfig& cfg, std::span<const PcapFrame> frames, const RunOptions& opts) {
  cfg.check();
  SimReport rep;
  rep.config_name = cfg.name;
  rep.fpes = cfg.fpes;
  rep.freq_hz = cfg.freq_hz;
  rep.dataplane_hz = cfg.dataplane_hz;
  rep.threshold = cfg.threshold;
  rep.queue_depth = cfg.queue_depth;
  rep.timing_only = cfg.timing_only;
  rep.unchecked = cfg.unchecked;
  rep.fast_program_hash = program_hash(cfg.fast);
  rep.slow_program_hash = program_hash(cfg.slow);
  rep.fast_bundles = cfg.fast.bundles.size();
  rep.slow_bundles = cfg.slow.bundles.size();
  rep.frames = frames.size();

  // Phase 1: parse and monitor in timestamp order.
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frames[a].timestamp_ns < frames[b].timestamp_ns; });
  const std::uint64_t t0 = frames.empty() ? 0 : frames[order.front()].timestamp_ns;

  TrafficMonitor monitor(cfg.threshold);
  std::unordered_map<std::uint32_t, std::size_t> flow_of;
  std::vector<PacketQuery> queries;
  std::vector<std::array<std::uint8_t, kRawInputBytes>> inputs;
  for (const std::size_t fi : order) {
    const PcapFrame& frame = frames[fi];
    const ParseOutcome po = parse_packet(frame.data, frame.timestamp_ns, frame.orig_len);
    if (!po.packet) {
      (po.reason == SkipReason::not_ipv4 ? rep.skipped_not_ipv4 : rep.skipped_truncated) += 1;
      continue;
    }
    const PacketRecord& pkt = *po.packet;
    ++rep.parsed;
    rep.wire_bytes += pkt.wire_len;
    rep.trace_duration_ns = pkt.timestamp_ns - t0;
    const std::uint32_t hash = flow_hash(pkt.tuple);
    const std::uint64_t arrival = to_cycles(pkt.timestamp_ns - t0, cfg.freq_hz);

    auto [it, fresh] = flow_of.emplace(hash, rep.flows.size());
    if (fresh) {
      rep.flows.emplace_back();
      rep.flows.back().flow_hash = hash;
      rep.flows.back().tuple = pkt.tuple;
    }
    FlowRecord& flow = rep.flows[it->second];
    ++flow.packets;
    flow.bytes += pkt.wire_len;
    queries.push_back({arrival, hash, it->second});

    const DispatchDecision d = monitor.update(hash);
    for (const InferencePath path : {InferencePath::fast, InferencePath::slow}) {
      if (path == InferencePath::fast ? !d.fast : !d.slow) continue;
      InferenceRecord r;
      r.id = rep.inferences.size();
      r.flow_hash = hash;
      r.path = path;
      r.arrival_cycle = arrival;
      (path == InferencePath::fast ? flow.fast_id : flow.slow_id) = r.id;
      rep.inferences.push_back(r);
      inputs.push_back(pkt.raw_input);
    }
  }
  rep.fast_dispatches = monitor.counters().fast_dispatches;
  rep.slow_dispatches = monitor.counters().slow_dispatches;
  rep.flow_table_collisions = monitor.counters().collisions;

  // Phase 2: every dispatched inference, independent of queueing.
  std::vector<Outcome> outcomes;
  infer_all(cfg, rep.inferences, inputs, outcomes, opts.trace);
  for (std::size_t i = 0; i < rep.inferences.size(); ++i) {
    InferenceRecord& r = rep.inferences[i];
    r.pe_cycles = outcomes[i].cycles;
    r.label = outcomes[i].label;
    r.fault = outcomes[i].fault;
  }

  // Phase 3: queueing on the global PE clock.
  QueryTable table;
  Scheduler sched(cfg.fpes, cfg.queue_depth);
  sched.run(rep.inferences, queries, &table, &rep.flows);
  rep.queues = sched.stats();
  rep.query_table_collisions = table.collisions();

  std::uint64_t first = ~std::uint64_t{0}, last = 0;
  std::uint64_t fast_done = 0;
  for (std::size_t i = 0; i < rep.inferences.size(); ++i) {
    const InferenceRecord& r = rep.inferences[i];
    first = std::min(first, r.arrival_cycle);
    if (r.dropped) {
      ++rep.dropped;
      continue;
    }
    ++rep.completed;
    fast_done += r.path == InferencePath::fast;
    rep.faults += r.fault.has_value();
    rep.stall_cycles += outcomes[i].stalls;
    rep.raw_hazards += outcomes[i].hazards;
    last = std::max(last, r.complete_cycle);
  }
  if (rep.completed) {
    rep.makespan_cycles = last - first;
    rep.makespan_ns = static_cast<double>(rep.makespan_cycles) * 1e9 / static_cast<double>(cfg.freq_hz);
  }
  if (rep.makespan_cycles) {
    const double secs = static_cast<double>(rep.makespan_cycles) / static_cast<double>(cfg.freq_hz);
    rep.throughput_fps = static_cast<double>(fast_done) / secs;
    rep.throughput_mips = static_cast<double>(rep.completed) / secs / 1e6;
    rep.throughput_gbps = static_cast<double>(rep.wire_bytes) * 8 / secs / 1e9;
  }
  rep.fast_latency = latency_stats(rep, InferencePath::fast);
  rep.slow_latency = latency_stats(rep, InferencePath::slow);

  for (FlowRecord& f : rep.flows) {
    if (f.fast_id && !rep.inferences[*f.fast_id].dropped) {
      f.fast_label = rep.inferences[*f.fast_id].label;
      f.fast_latency_ns = rep.latency_ns(rep.inferences[*f.fast_id]);
    }
    if (f.slow_id && !rep.inferences[*f.slow_id].dropped) {
      f.slow_label = rep.inferences[*f.slow_id].label;
      f.slow_latency_ns = rep.latency_ns(rep.inferences[*f.slow_id]);
    }
    const QueryEntry& e = table.entry(f.flow_hash);
    if (e.valid && e.key_hash == f.flow_hash) f.final_label = e.label;
    rep.labeled_packets += f.labeled_packets;
  }

  rep.forwarded_packets = rep.parsed;
  rep.query_latency_ns_per_packet = forwarding_latency_ns(cfg.dataplane_hz);
  rep.query_cycles_total = rep.forwarded_packets * kQueryCycles;
  return rep;
}

SimReport run_trace(const EngineConfig& cfg, const std::string& pcap_path, const RunOptions& opts) {
  const auto frames = read_pcap(pcap_path);
  return run_trace(cfg, frames, opts);
}

PeakResult peak_search(const EngineConfig& cfg, const PeakOptions& opts) {
  cfg.check();
  if (opts.flows == 0) throw std::invalid_argument("peak search needs at least one flow");
  if (opts.resolution == 0) throw std::invalid_argument("resolution must be positive");

  Runner probe(cfg);
  const std::vector<std::uint8_t> zeros(input_len(cfg.fast), 0);
  const Outcome o = probe.run(InferencePath::fast, zeros, nullptr);
  if (o.fault) throw std::runtime_error("fast program faults: " + *o.fault);

  PeakResult res;
  res.service_cycles = o.cycles;
  std::uint64_t makespan = 0;
  const auto drops_at = [&](std::uint64_t period) {
    std::vector<InferenceRecord> recs(opts.flows);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      recs[i].id = i;
      recs[i].flow_hash = static_cast<std::uint32_t>(i);
      recs[i].arrival_cycle = static_cast<std::uint64_t>(i) * period / opts.resolution;
      recs[i].pe_cycles = o.cycles;
    }
    Scheduler sched(cfg.fpes, cfg.queue_depth);
    sched.run(recs, {}, nullptr, nullptr);
    ++res.probes;
    std::uint64_t dropped = 0, last = 0;
    for (const auto& r : recs) {
      dropped += r.dropped;
      if (!r.dropped) last = std::max(last, r.complete_cycle);
    }
    makespan = last;
    return dropped;
  };

  // One arrival per service time never queues, so the high end is always drop-free.
  std::uint64_t lo = 0, hi = std::max<std::uint64_t>(o.cycles, 1) * opts.resolution;
  if (drops_at(lo) == 0) {
    hi = lo;
  } else {
    while (hi - lo > 1) {
      const std::uint64_t mid = lo + (hi - lo) / 2;
      (drops_at(mid) == 0 ? hi : lo) = mid;
    }
  }
  if (drops_at(hi) != 0) throw std::logic_error("drop count is not monotone in the arrival rate");
  res.period_steps = hi;
  res.makespan_cycles = makespan;
  const double f = static_cast<double>(cfg.freq_hz);
  res.peak_fps = makespan ? static_cast<double>(opts.flows) * f / static_cast<double>(makespan) : 0;
  res.offered_fps = hi ? static_cast<double>(opts.resolution) * f / static_cast<double>(hi)
                       : std::numeric_limits<double>::infinity();
  return res;
}

}  // namespace kscope
