#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kscope/blocked_linalg.hpp"
#include "kscope/isa.hpp"

namespace kscope {

struct FpeConfig {
  std::size_t n = 8;  // multipliers per dot unit
  std::size_t t = 8;  // dot units per SIMD lane
  std::size_t k = 4;  // SIMD lanes
  std::size_t regfile_words = 32;
  std::size_t pcache_bytes = 8192;
  std::size_t icache_bytes = 1024;
  std::size_t pipeline_depth = 6;
  std::size_t acc_groups = 4;
  std::size_t out_words = 4;
  std::size_t input_bytes = 64;

  // Throws std::invalid_argument unless n*k == 32 and t == 8 (the encoded block shape).
  void check() const;
  TargetLimits limits() const;
};

using Word = std::array<Fix8, kLanes>;

struct PeFault {
  std::size_t pc = 0;
  std::string message;
};

struct FpeState {
  std::size_t pc = 0;
  std::uint64_t cycle = 0;
  bool halted = false;
  std::optional<PeFault> fault;
  std::uint64_t raw_hazards = 0;
  std::vector<Word> regfile;
  std::vector<std::array<WideAcc, kFpeBlockCols>> acc;
  std::array<std::array<Fix8, kFpeBlockBytes>, 2> pbuf{};
  std::vector<Word> out;
  std::array<std::uint8_t, 256> input{};
};

struct FpeResult {
  Fix8Vector output;
  std::uint64_t cycles = 0;
  std::uint64_t raw_hazards = 0;
  std::optional<PeFault> fault;
};

class FpeSim {
 public:
  explicit FpeSim(FpeConfig cfg = {});

  // Validates against the config; throws CapacityError / ValidationError.
  void load_program(const ProgramImage& img);
  // Skips validation; out-of-range operands surface as runtime faults.
  void load_unchecked(const ProgramImage& img);

  // Starts an inference: state cleared, pc = 0, cycle = 0, input latched.
  // Throws DimensionError when the input length disagrees with START.
  void begin(std::span<const std::uint8_t> input);
  void step(std::ostream* trace = nullptr);
  FpeResult run_inference(std::span<const std::uint8_t> input, std::ostream* trace = nullptr);

  const FpeState& state() const { return st_; }
  const FpeConfig& config() const { return cfg_; }
  const ProgramImage& program() const { return img_; }
  bool loaded() const { return loaded_; }

 private:
  struct Pending {
    std::uint64_t visible = 0;
    enum class Kind : std::uint8_t { regfile, out, pbuf } kind = Kind::regfile;
    std::size_t index = 0;
    std::size_t lane = 0;
    std::vector<Fix8> values;
  };

  void fault(const std::string& msg);
  void retire(std::uint64_t upto);
  bool pending_write(Pending::Kind kind, std::size_t index) const;
  void exec_compute(const ComputeOp& op);
  void exec_param(const ParamOp& op);
  void exec_data(const DataOp& op);
  Fix8Vector collect_output() const;

  FpeConfig cfg_;
  ProgramImage img_;
  std::vector<std::uint8_t> pcache_;
  bool loaded_ = false;
  FpeState st_;
  std::vector<Pending> pending_;
};

// Smallest index attaining the maximum decoded value. Throws std::invalid_argument on empty input.
std::size_t argmax(const Fix8Vector& v);

}  // namespace kscope
