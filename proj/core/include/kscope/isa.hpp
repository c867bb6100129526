#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kscope/fix8.hpp"

namespace kscope {

enum class Target : std::uint8_t { fpe = 0, hpe = 1 };

std::string_view to_string(Target t);
Target parse_target(std::string_view s);

inline constexpr std::size_t kLanes = 32;              // Fix8 lanes per 256-bit word
inline constexpr std::size_t kFpeBundleBytes = 8;
inline constexpr std::size_t kHpeBundleBytes = 12;
inline constexpr std::size_t kNumActTables = 4;
inline constexpr std::size_t kFpeBlockRows = 32;       // MV input slice (n*k)
inline constexpr std::size_t kFpeBlockCols = 8;        // MV outputs (t)
inline constexpr std::size_t kFpeBlockBytes = kFpeBlockRows * kFpeBlockCols;
inline constexpr std::size_t kHpeTileDim = 32;
inline constexpr std::size_t kHpeTileBytes = kHpeTileDim * kHpeTileDim;

constexpr std::size_t bundle_bytes(Target t) { return t == Target::fpe ? kFpeBundleBytes : kHpeBundleBytes; }

enum class Opcode : std::uint8_t { NOP, START, FIN, MV, MVA, MVAA, MM, ACC, ACCA, ACCP, LDP, LDR, STR };
std::string_view mnemonic(Opcode op);

struct NopOp {
  friend bool operator==(const NopOp&, const NopOp&) = default;
};

// in_len == 0 accepts any input length.
struct StartOp {
  std::uint16_t in_len = 0;
  friend bool operator==(const StartOp&, const StartOp&) = default;
};

// Output shape: rows x cols elements read back from the output buffer.
struct FinOp {
  std::uint16_t rows = 1;
  std::uint16_t cols = 0;
  friend bool operator==(const FinOp&, const FinOp&) = default;
};

enum class FpeDest : std::uint8_t { regfile, out };

// MV / MVA / MVAA (FPE).
struct MvOp {
  Opcode op = Opcode::MV;
  std::uint8_t src = 0;   // regfile word
  std::uint8_t pbuf = 0;  // param buffer 0/1
  std::uint8_t acc = 0;   // accumulator group
  bool multiply = true;   // false only for the activate-only MVAA form
  std::uint8_t table = 0;
  FpeDest dst_kind = FpeDest::regfile;
  std::uint8_t dst = 0;       // word
  std::uint8_t dst_lane = 0;  // multiple of 8
  friend bool operator==(const MvOp&, const MvOp&) = default;
};

// MM (HPE): rows consecutive bank-1 words through the systolic array into bank 2|3.
struct MmOp {
  std::uint16_t src = 0;
  std::uint16_t rows = 1;
  std::uint8_t dst_bank = 2;
  std::uint16_t dst = 0;
  friend bool operator==(const MmOp&, const MmOp&) = default;
};

enum class AccOperands : std::uint8_t { both = 0, bank2 = 1, bank3 = 2 };
enum class HpeDest : std::uint8_t { bank1, bank2, bank3, out };

// ACC / ACCA / ACCP (HPE): merge bank2[offset..] and/or bank3[offset..].
struct AccOp {
  Opcode op = Opcode::ACC;
  std::uint16_t offset = 0;
  AccOperands operands = AccOperands::both;
  HpeDest dst_kind = HpeDest::bank2;
  std::uint16_t dst = 0;
  std::uint16_t len = 1;  // rows read
  std::uint8_t table = 0;
  std::uint8_t pool_window = 1;
  std::uint8_t pool_stride = 1;
  friend bool operator==(const AccOp&, const AccOp&) = default;
};

using ComputeOp = std::variant<NopOp, StartOp, FinOp, MvOp, MmOp, AccOp>;

// FPE: copy len bytes at pCache byte address addr into param buffer pbuf (rest zero).
// HPE: load weight tile number addr into the systolic array's shadow registers.
struct LdpOp {
  std::uint8_t pbuf = 0;
  std::uint32_t addr = 0;
  std::uint16_t len = 0;
  friend bool operator==(const LdpOp&, const LdpOp&) = default;
};

using ParamOp = std::variant<NopOp, LdpOp>;

enum class LdrSource : std::uint8_t { input, one, zero, bank1 };

// FPE LDR: regfile[dst .. dst+len) <- input words / constant words.
struct LdrOp {
  std::uint8_t dst = 0;
  LdrSource src = LdrSource::input;
  std::uint8_t src_word = 0;
  std::uint8_t len = 1;
  friend bool operator==(const LdrOp&, const LdrOp&) = default;
};

// FPE STR: output buffer words <- regfile words.
struct StrOp {
  std::uint8_t src = 0;
  std::uint8_t out_word = 0;
  std::uint8_t len = 1;
  friend bool operator==(const StrOp&, const StrOp&) = default;
};

// HPE LDR: strided gather into bank 1. For r in [0, rows):
//   bank1[dst + r] lanes [dst_lane, dst_lane + width) <- source row (src_base + r * src_stride) lanes [0, width)
// An input-buffer "row" i starts at byte i; constant sources ignore src_base/src_stride.
struct GatherOp {
  LdrSource src = LdrSource::input;
  std::uint16_t src_base = 0;
  std::uint8_t src_stride = 0;
  std::uint16_t dst = 0;
  std::uint8_t dst_lane = 0;
  std::uint8_t width = 1;
  std::uint8_t rows = 1;
  friend bool operator==(const GatherOp&, const GatherOp&) = default;
};

using DataOp = std::variant<NopOp, LdrOp, StrOp, GatherOp>;

struct Bundle {
  ComputeOp compute = NopOp{};
  ParamOp param = NopOp{};
  DataOp data = NopOp{};
  friend bool operator==(const Bundle&, const Bundle&) = default;
};

Opcode opcode_of(const ComputeOp& op);
Opcode opcode_of(const ParamOp& op);
Opcode opcode_of(const DataOp& op);

struct ProgramImage {
  Target target = Target::fpe;
  std::vector<Bundle> bundles;
  std::vector<std::uint8_t> param_image;
  std::array<ActTable, kNumActTables> act_tables = default_tables();

  std::size_t code_bytes() const { return bundles.size() * bundle_bytes(target); }
  std::optional<StartOp> start() const;
  std::optional<FinOp> fin() const;

  static std::array<ActTable, kNumActTables> default_tables();
  friend bool operator==(const ProgramImage&, const ProgramImage&) = default;
};

// Storage limits a program is checked against. FpeConfig / HpeConfig produce these.
struct TargetLimits {
  Target target = Target::fpe;
  std::size_t icache_bytes = 0;
  std::size_t pcache_bytes = 0;
  std::size_t regfile_words = 0;  // FPE
  std::size_t acc_groups = 0;     // FPE
  std::size_t bank_words = 0;     // HPE, per bank
  std::size_t out_words = 0;
  std::size_t max_input_bytes = 64;
};

TargetLimits default_limits(Target t);

enum class DiagKind : std::uint8_t { capacity, placement, slot, bounds };
std::string_view to_string(DiagKind k);

struct Diagnostic {
  static constexpr std::size_t kImage = static_cast<std::size_t>(-1);
  std::size_t bundle = kImage;
  DiagKind kind = DiagKind::bounds;
  std::string message;
};

std::vector<Diagnostic> validate(const ProgramImage& img, const TargetLimits& limits);
std::string format_diagnostics(const std::vector<Diagnostic>& diags);

// Thrown when a program fails validation for a reason other than capacity.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Diagnostic> diags);
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diags_; }

 private:
  std::vector<Diagnostic> diags_;
};

// Throws CapacityError for the first capacity diagnostic, else ValidationError.
void require_valid(const ProgramImage& img, const TargetLimits& limits);

// Fixed-width little-endian bundle words.
std::vector<std::uint8_t> encode_bundle(const Bundle& b, Target t);
Bundle decode_bundle(std::span<const std::uint8_t> word, Target t);

// KPRG: "KPRG", u8 version, u8 target, u32 bundle count, bundles, u32 param length,
// param bytes, 4 x 256 activation table bytes. Little-endian.
inline constexpr std::uint8_t kProgramFormatVersion = 1;
std::vector<std::uint8_t> encode_binary(const ProgramImage& img);
ProgramImage decode_binary(std::span<const std::uint8_t> bytes);

// Assembly text <-> image. `target` is used unless the source has a .target directive;
// disassemble emits .target only for non-FPE programs.
ProgramImage assemble(std::string_view source, Target target = Target::fpe);
ProgramImage assemble(std::string_view source, Target target, const TargetLimits& limits);
// Syntax and encodability only; no capacity, placement or bounds checks.
ProgramImage assemble_unchecked(std::string_view source, Target target = Target::fpe);
std::string disassemble(const ProgramImage& img);
std::string format_bundle(const Bundle& b, Target t);

}  // namespace kscope
