#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "kscope/compiler.hpp"
#include "kscope/engine.hpp"
#include "kscope/errors.hpp"
#include "kscope/fixtures.hpp"
#include "kscope/golden.hpp"
#include "kscope/isa.hpp"
#include "kscope/model.hpp"
#include "kscope/oracle.hpp"
#include "kscope/pcap.hpp"
#include "kscope/report.hpp"
#include "kscope/traffic_gen.hpp"

using namespace kscope;

namespace {

// Bad flags or values: exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::string& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void write_text(const std::string& path, std::string_view text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Target target_arg(const std::string& s) {
  try {
    return parse_target(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::uint64_t freq_arg(double hz) {
  if (!(hz >= 1) || hz > 1e10 || hz != std::floor(hz)) throw UsageError("--freq-hz must be a whole number of Hz");
  return static_cast<std::uint64_t>(hz);
}

std::vector<std::uint8_t> parse_hex(std::string_view s) {
  std::vector<std::uint8_t> out;
  int hi = -1;
  for (const char c : s) {
    if (c == ' ' || c == ':' || c == '_') continue;
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw UsageError(std::string("invalid hex digit '") + c + "'");
    if (hi < 0) {
      hi = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(hi << 4 | v));
      hi = -1;
    }
  }
  if (hi >= 0) throw UsageError("hex input has an odd number of digits");
  return out;
}

std::string hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  for (const auto b : bytes) {
    s += kDigits[b >> 4];
    s += kDigits[b & 15];
  }
  return s;
}

// First line of every run: the resolved invocation, enough to reproduce it.
void echo(const std::string& cmd, const std::map<std::string, std::string>& opts) {
  std::cout << "# kscope " << cmd;
  for (const auto& [k, v] : opts) std::cout << " --" << k << ' ' << v;
  std::cout << '\n';
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Model {
  ModelSpec spec;
  WeightsFile weights;
};

Model load_model(const std::string& model_path, const std::string& weights_path) {
  Model m{parse_model(read_text(model_path)), {}};
  m.weights = decode_weights(read_bytes(weights_path));
  return m;
}

ProgramImage load_program(const std::string& path) { return decode_binary(read_bytes(path)); }

struct EngineArgs {
  std::string preset = "k4fpe";
  std::size_t fpes = 0;
  double freq_hz = 0;
  std::string fast, slow;
  std::uint32_t threshold = kElephantThreshold;
  std::size_t queue_depth = kQueueDepth;
  std::size_t threads = 0;
  bool unchecked = false;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "kbase | k4fpe | k8fpe, optionally with -asic")->capture_default_str();
    app->add_option("--fpes", fpes, "FPE count (overrides the preset)");
    app->add_option("--freq-hz", freq_hz, "PE clock in Hz (overrides the preset)");
    app->add_option("--fast", fast, "FPE program (.kprg)")->required()->check(CLI::ExistingFile);
    app->add_option("--slow", slow, "HPE program (.kprg)")->required()->check(CLI::ExistingFile);
    app->add_option("--threshold", threshold, "elephant packet-count threshold")->capture_default_str();
    app->add_option("--queue-depth", queue_depth, "FIFO depth per PE")->capture_default_str();
    app->add_option("--threads", threads, "inference threads (0: all cores)");
    app->add_flag("--unchecked", unchecked, "skip program validation; violations become PE faults");
  }

  EngineConfig config() const {
    EngineConfig cfg;
    try {
      cfg = EngineConfig::preset(preset);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const EngineConfig base = cfg;
    if (fpes) cfg.fpes = fpes;
    if (freq_hz != 0) cfg.freq_hz = freq_arg(freq_hz);
    cfg.threshold = threshold;
    cfg.queue_depth = queue_depth;
    cfg.threads = threads;
    cfg.unchecked = unchecked;
    cfg.fast = load_program(fast);
    cfg.slow = load_program(slow);
    if (cfg.fpes != base.fpes || cfg.freq_hz != base.freq_hz) cfg.name += "-custom";
    return cfg;
  }

  std::map<std::string, std::string> echo(const EngineConfig& cfg) const {
    return {{"preset", preset},
            {"fpes", std::to_string(cfg.fpes)},
            {"freq-hz", std::to_string(cfg.freq_hz)},
            {"fast", fast},
            {"slow", slow},
            {"threshold", std::to_string(threshold)},
            {"queue-depth", std::to_string(queue_depth)}};
  }
};

int cmd_asm(const std::string& in, const std::string& target, const std::string& out, bool unchecked) {
  const Target t = target_arg(target);
  const std::string src = read_text(in);
  const ProgramImage img = unchecked ? assemble_unchecked(src, t) : assemble(src, t);
  write_bytes(out, encode_binary(img));
  std::cout << "assembled " << img.bundles.size() << " bundles (" << to_string(img.target) << ", "
            << img.code_bytes() << " code bytes, " << img.param_image.size() << " param bytes) -> " << out << '\n';
  return 0;
}

int cmd_disasm(const std::string& in, const std::string& out) {
  const std::string text = disassemble(load_program(in));
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return 0;
}

int cmd_compile(const std::string& model_path, const std::string& weights_path, const std::string& target,
                const std::string& out, const std::string& layout_path) {
  Model m = load_model(model_path, weights_path);
  if (!target.empty()) m.spec.target = target_arg(target);
  const CompiledProgram p = compile(m.spec, m.weights);
  write_bytes(out, encode_binary(p.image));
  std::cout << "compiled " << m.spec.name << " for " << to_string(p.image.target) << ": " << p.image.bundles.size()
            << " bundles, " << p.image.param_image.size() << " param bytes, predicted " << p.predicted_cycles
            << " cycles -> " << out << '\n';
  if (!layout_path.empty()) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& e : p.layout) {
      j.push_back({{"name", e.name}, {"space", e.space}, {"offset", e.offset}, {"size", e.size}});
    }
    write_text(layout_path, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_oracle(const std::string& model_path, const std::string& weights_path, const std::string& input,
               const std::string& pcap) {
  if (input.empty() == pcap.empty()) throw UsageError("oracle needs exactly one of --input or --pcap");
  const Model m = load_model(model_path, weights_path);
  m.spec.check();
  if (!input.empty()) {
    const auto bytes = parse_hex(input);
    if (bytes.size() != m.spec.input_len) {
      throw UsageError("input has " + std::to_string(bytes.size()) + " bytes, model expects " +
                       std::to_string(m.spec.input_len));
    }
    const Fix8Vector out = model_oracle(m.spec, m.weights, bytes);
    std::cout << "output";
    for (std::size_t i = 0; i < out.size(); ++i) std::cout << ' ' << static_cast<int>(static_cast<std::int8_t>(out[i].bits()));
    std::cout << "\nlabel " << argmax(out) << '\n';
    return 0;
  }
  if (m.spec.input_len > kRawInputBytes) throw UsageError("model input exceeds the 64-byte packet input");
  // First packet of every flow, as dispatched to the fast path.
  std::cout << "flow_hash,input_hex,label\n";
  TrafficMonitor monitor;
  for (const auto& f : read_pcap(pcap)) {
    const auto po = parse_packet(f.data, f.timestamp_ns, f.orig_len);
    if (!po.packet || !monitor.update(*po.packet).fast) continue;
    const auto in = po.packet->input(m.spec.input_len);
    char h[9];
    std::snprintf(h, sizeof h, "%08x", flow_hash(po.packet->tuple));
    std::cout << h << ',' << hex(in) << ',' << oracle_label(m.spec, m.weights, in) << '\n';
  }
  return 0;
}

struct GenArgs {
  std::string out;
  std::string profile = "iscx";
  std::size_t flows = 1000;
  double rate = 1e5;
  std::size_t burst = 1;
  bool poisson = false;
  std::uint64_t seed = 1;
  bool allow_collisions = false;
};

int cmd_gen_traffic(const GenArgs& a) {
  TrafficProfile p;
  if (a.profile == "iscx") p = TrafficProfile::iscx_like(a.flows, a.rate, a.seed);
  else if (a.profile == "uniform") p = TrafficProfile::uniform(a.flows, a.rate, a.seed);
  else throw UsageError("unknown profile '" + a.profile + "' (iscx | uniform)");
  p.burst_size = a.burst;
  p.poisson = a.poisson;
  p.distinct_table_index = !a.allow_collisions;
  try {
    p.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  echo("gen-traffic", {{"profile", a.profile},
                       {"flows", std::to_string(a.flows)},
                       {"rate-fps", num(a.rate)},
                       {"burst", std::to_string(a.burst)},
                       {"seed", std::to_string(a.seed)},
                       {"output", a.out}});
  const GeneratedTrace g = gen_traffic(p);
  write_pcap(a.out, g.frames);
  const auto& s = g.stats;
  std::cout << "flows " << s.flows << ", packets " << s.packets << ", bytes " << s.bytes << ", duration_ns "
            << s.duration_ns << '\n'
            << "elephant_flow_share_pct " << s.elephant_flow_share * 100 << ", elephant_byte_share_pct "
            << s.elephant_byte_share * 100 << '\n';
  return 0;
}

int cmd_run(const EngineArgs& e, const std::string& pcap, const std::string& report, const std::string& flows_csv_path,
            const std::string& inferences_csv_path, bool records, bool timing_only) {
  EngineConfig cfg = e.config();
  cfg.timing_only = timing_only;
  auto opts = e.echo(cfg);
  opts["pcap"] = pcap;
  if (timing_only) opts["timing-only"] = "1";
  echo("run", opts);
  const char* trace_env = std::getenv("KSCOPE_TRACE");
  RunOptions ro;
  if (trace_env && std::string_view(trace_env) == "1") ro.trace = &std::cerr;
  const SimReport rep = run_trace(cfg, pcap, ro);
  if (!report.empty()) write_text(report, report_json(rep, records));
  if (!flows_csv_path.empty()) write_text(flows_csv_path, flows_csv(rep));
  if (!inferences_csv_path.empty()) write_text(inferences_csv_path, inferences_csv(rep));
  std::cout << report_summary(rep);
  if (rep.faults) {
    std::cerr << "kscope: " << rep.faults << " PE fault(s) recorded\n";
    return 1;
  }
  return 0;
}

int cmd_peak(const EngineArgs& e, std::size_t flows) {
  const EngineConfig cfg = e.config();
  auto opts = e.echo(cfg);
  opts["flows"] = std::to_string(flows);
  echo("peak", opts);
  PeakOptions po;
  po.flows = flows;
  const PeakResult r = peak_search(cfg, po);
  std::cout << "service_cycles " << r.service_cycles << '\n'
            << "peak_fps " << num(r.peak_fps) << '\n'
            << "offered_fps " << num(r.offered_fps) << '\n'
            << "period_cycles " << num(static_cast<double>(r.period_steps) / po.resolution) << '\n'
            << "probes " << r.probes << '\n';
  return 0;
}

int cmd_fixture(const std::string& name, const std::string& model_out, const std::string& weights_out,
                std::uint64_t seed) {
  ModelSpec spec;
  try {
    spec = fixtures::by_name(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto w = encode_weights(fixtures::make_weights(spec, seed));
  write_text(model_out, serialize_model(spec));
  write_bytes(weights_out, w);
  std::cout << "fixture " << name << ": " << w.size() << " weight-file bytes, seed " << seed << '\n';
  return 0;
}

int cmd_golden(const std::string& out, const std::string& check, std::size_t count, std::uint64_t seed) {
  if (out.empty() == check.empty()) throw UsageError("golden needs exactly one of -o or --check");
  if (!out.empty()) {
    const auto pairs = make_golden(count, seed);
    write_text(out, write_golden(pairs));
    std::cout << "golden: " << pairs.size() << " pairs, seed " << seed << '\n';
    return 0;
  }
  const auto pairs = read_golden(read_text(check));
  const auto bad = golden_mismatches(pairs);
  for (const auto& p : bad) {
    std::cout << "mismatch " << p.real << ": expected " << static_cast<int>(p.expected.bits()) << ", encode gives "
              << static_cast<int>(encode(p.real).bits()) << '\n';
  }
  std::cout << "golden: " << pairs.size() - bad.size() << "/" << pairs.size() << " pairs match\n";
  return bad.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kscope: bypass NN co-processor compiler and simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kscope 0.1.0");

  std::string in, out, target, compile_target, model, weights, input, pcap, report, fcsv, icsv, layout, fixture_name;
  bool unchecked = false, records = false, timing_only = false;
  std::uint64_t seed = 1;
  std::size_t peak_flows = 20000;
  GenArgs gen;
  EngineArgs eng;

  auto* asm_cmd = app.add_subcommand("asm", "assemble text into a program binary");
  asm_cmd->add_option("source", in, ".kasm file")->required()->check(CLI::ExistingFile);
  asm_cmd->add_option("--target", target, "fpe | hpe (a .target directive takes precedence)")->default_val("fpe");
  asm_cmd->add_option("-o,--output", out, ".kprg output")->required();
  asm_cmd->add_flag("--unchecked", unchecked, "skip capacity validation");

  auto* dis_cmd = app.add_subcommand("disasm", "disassemble a program binary");
  dis_cmd->add_option("program", in, ".kprg file")->required()->check(CLI::ExistingFile);
  dis_cmd->add_option("-o,--output", out, "text output (default: stdout)");

  auto* comp_cmd = app.add_subcommand("compile", "compile a model and weights for a PE");
  comp_cmd->add_option("model", model, ".model file")->required()->check(CLI::ExistingFile);
  comp_cmd->add_option("--weights", weights, ".kwgt file")->required()->check(CLI::ExistingFile);
  comp_cmd->add_option("--target", compile_target, "fpe | hpe (default: the model's target)");
  comp_cmd->add_option("-o,--output", out, ".kprg output")->required();
  comp_cmd->add_option("--layout", layout, "write the memory layout as JSON");

  auto* orc_cmd = app.add_subcommand("oracle", "reference inference, layer by layer");
  orc_cmd->add_option("model", model, ".model file")->required()->check(CLI::ExistingFile);
  orc_cmd->add_option("--weights", weights, ".kwgt file")->required()->check(CLI::ExistingFile);
  auto* orc_in = orc_cmd->add_option("--input", input, "hex-encoded input bytes");
  auto* orc_pcap = orc_cmd->add_option("--pcap", pcap, "label the first packet of every flow")->check(CLI::ExistingFile);
  orc_in->excludes(orc_pcap);

  auto* gen_cmd = app.add_subcommand("gen-traffic", "write a synthetic pcap trace");
  gen_cmd->add_option("-o,--output", gen.out, ".pcap output")->required();
  gen_cmd->add_option("--profile", gen.profile, "iscx | uniform")->capture_default_str();
  gen_cmd->add_option("--flows", gen.flows, "flow count")->capture_default_str();
  gen_cmd->add_option("--rate-fps", gen.rate, "flow start rate")->capture_default_str();
  gen_cmd->add_option("--burst", gen.burst, "flows starting together")->capture_default_str();
  gen_cmd->add_flag("--poisson", gen.poisson, "exponential gaps between bursts");
  gen_cmd->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  gen_cmd->add_flag("--allow-collisions", gen.allow_collisions, "do not force distinct flow-table indices");

  auto* run_cmd = app.add_subcommand("run", "replay a trace through the co-processor");
  eng.add(run_cmd);
  run_cmd->add_option("--pcap", pcap, "trace")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--report", report, "JSON report output");
  run_cmd->add_flag("--records", records, "include per-flow and per-inference records in the JSON report");
  run_cmd->add_option("--flows-csv", fcsv, "per-flow table");
  run_cmd->add_option("--inferences-csv", icsv, "per-inference table");
  run_cmd->add_flag("--timing-only", timing_only, "cycle counts from one probe inference, no labels");

  auto* peak_cmd = app.add_subcommand("peak", "search the highest zero-drop flow rate");
  eng.add(peak_cmd);
  peak_cmd->add_option("--flows", peak_flows, "uniform 1-packet flows per probe")->capture_default_str();

  auto* fix_cmd = app.add_subcommand("fixture", "write a built-in model and deterministic weights");
  fix_cmd->add_option("name", fixture_name, "mlp-e | mlp-c | mlp-m | cnn-e | rnn-m")->required();
  fix_cmd->add_option("--model", model, ".model output")->required();
  fix_cmd->add_option("--weights", weights, ".kwgt output")->required();
  fix_cmd->add_option("--seed", seed, "weight seed")->capture_default_str();

  std::string golden_check;
  std::size_t golden_count = 10000;
  auto* gold_cmd = app.add_subcommand("golden", "write or check quantizer exchange vectors");
  gold_cmd->add_option("-o,--output", out, "write pairs to this file");
  gold_cmd->add_option("--check", golden_check, "verify a pair file against encode")->check(CLI::ExistingFile);
  gold_cmd->add_option("--count", golden_count, "pairs to write")->capture_default_str();
  gold_cmd->add_option("--seed", seed, "RNG seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*asm_cmd) return cmd_asm(in, target, out, unchecked);
    if (*dis_cmd) return cmd_disasm(in, out);
    if (*comp_cmd) return cmd_compile(model, weights, compile_target, out, layout);
    if (*orc_cmd) return cmd_oracle(model, weights, input, pcap);
    if (*gen_cmd) return cmd_gen_traffic(gen);
    if (*run_cmd) return cmd_run(eng, pcap, report, fcsv, icsv, records, timing_only);
    if (*peak_cmd) return cmd_peak(eng, peak_flows);
    if (*fix_cmd) return cmd_fixture(fixture_name, model, weights, seed);
    if (*gold_cmd) return cmd_golden(out, golden_check, golden_count, seed);
  } catch (const UsageError& e) {
    std::cerr << "kscope: " << e.what() << '\n';
    return 2;
  } catch (const CapacityError& e) {
    std::cerr << "kscope: " << e.resource() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "kscope: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
