#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "kscope/blocked_linalg.hpp"
#include "kscope/fpe_sim.hpp"
#include "kscope/isa.hpp"

namespace kscope {

struct HpeConfig {
  std::size_t array_dim = 32;
  std::size_t bank_words = 1024;
  std::size_t ports_per_bank = 2;
  std::size_t out_words = 256;
  std::size_t pcache_bytes = 524288;
  std::size_t icache_bytes = 8192;
  std::size_t input_bytes = 64;
  std::size_t weight_preload_cycles = 32;
  std::size_t drain_cycles = 3;

  // Throws std::invalid_argument unless array_dim == 32 (the encoded tile shape).
  void check() const;
  TargetLimits limits() const;
  // Compute-phase latency of one MM over l rows: l + 2n - 1.
  std::uint64_t mm_cycles(std::size_t l) const { return l + 2 * array_dim - 1; }
};

using AccWord = std::array<WideAcc, kLanes>;

struct HpeState {
  std::size_t pc = 0;
  std::uint64_t cycle = 0;
  bool halted = false;
  std::optional<PeFault> fault;
  std::uint64_t stall_cycles = 0;
  std::vector<Word> bank1;
  std::vector<AccWord> bank2;
  std::vector<AccWord> bank3;
  std::vector<Word> out;
  std::array<Fix8, kHpeTileBytes> weights{};
  std::array<Fix8, kHpeTileBytes> shadow{};
  std::array<std::uint8_t, 1024> input{};
};

struct OpEvent {
  std::size_t pc = 0;
  Opcode op = Opcode::NOP;
  std::uint64_t issue = 0;
  std::uint64_t complete = 0;
};

struct HpeResult {
  Fix8Vector output;  // rows x cols, row-major
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t cycles = 0;
  std::uint64_t stall_cycles = 0;
  std::size_t max_bank_accesses = 0;  // most accesses granted to one bank in one cycle
  std::vector<OpEvent> events;
  std::optional<PeFault> fault;
};

class HpeSim {
 public:
  explicit HpeSim(HpeConfig cfg = {});

  void load_program(const ProgramImage& img);
  void load_unchecked(const ProgramImage& img);

  HpeResult run_inference(std::span<const std::uint8_t> input, std::ostream* trace = nullptr);

  const HpeState& state() const { return st_; }
  const HpeConfig& config() const { return cfg_; }
  const ProgramImage& program() const { return img_; }
  bool loaded() const { return loaded_; }

 private:
  enum class Unit : std::uint8_t { sa, accu, loader, param };
  struct Region {
    int bank = 0;  // 0 = output buffer, 1..3 = RAM banks
    std::size_t lo = 0;
    std::size_t hi = 0;
    bool write = false;
  };
  struct Active {
    Unit unit = Unit::sa;
    std::size_t pc = 0;
    Opcode op = Opcode::NOP;
    std::uint64_t issue = 0;
    std::uint64_t duration = 0;
    std::uint64_t progress = 0;
    std::vector<Region> regions;
    // Per-step bank demand.
    std::size_t rows = 0;      // MM l, ACC len, gather rows
    int read_a = 0;            // bank read every step (or during the first `rows` steps for MM)
    int read_b = 0;
    int write_bank = 0;
    std::uint64_t write_from = 0;  // MM: first writing step
    std::vector<bool> write_steps;  // ACCP: steps that write
  };

  void fault(const std::string& msg);
  bool try_issue(const Bundle& b, std::size_t pc);
  bool conflicts(const std::vector<Region>& regions) const;
  bool unit_busy(Unit u) const;
  void demand(const Active& a, std::array<std::size_t, 4>& use) const;
  bool start_compute(const ComputeOp& op, std::size_t pc, std::vector<Active>& started);
  bool start_param(const ParamOp& op, std::size_t pc, std::vector<Active>& started);
  bool start_data(const DataOp& op, std::size_t pc, std::vector<Active>& started);

  HpeConfig cfg_;
  ProgramImage img_;
  std::vector<std::uint8_t> pcache_;
  bool loaded_ = false;
  HpeState st_;
  std::vector<Active> active_;
  std::vector<OpEvent> events_;
  std::size_t max_bank_accesses_ = 0;
};

// Maximum by decoded value. Throws std::invalid_argument on an empty window.
Fix8 maxpool(std::span<const Fix8> window);

}  // namespace kscope
