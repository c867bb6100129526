#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kscope/blocked_linalg.hpp"
#include "kscope/fpe_sim.hpp"
#include "kscope/hpe_sim.hpp"
#include "kscope/isa.hpp"
#include "kscope/model.hpp"

namespace kscope {

struct CompileOptions {
  FpeConfig fpe;
  HpeConfig hpe;
};

// One named allocation. Offsets and sizes are bytes for pCache, words elsewhere.
struct LayoutEntry {
  std::string name;
  std::string space;  // pCache | regfile | bank1 | bank2 | bank3 | out
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct CompiledProgram {
  ProgramImage image;
  std::vector<LayoutEntry> layout;
  std::uint64_t predicted_cycles = 0;
  std::size_t input_len = 0;
  std::size_t output_len = 0;
};

// Lowers spec + weights for spec.target. Throws CapacityError naming the overflowing
// resource (pCache, iCache, regfile, bank1, bank2, output buffer, input buffer),
// DimensionError / FormatError for inconsistent weights, std::invalid_argument for
// layer arrangements the target cannot express.
CompiledProgram compile(const ModelSpec& spec, const WeightsFile& weights, const CompileOptions& opts = {});

// One dense layer on the FPE in isolation: input in regfile words [0, x), the
// constant-one word at x, outputs to the output buffer, params packed from address 0.
struct DenseFpeLowering {
  std::vector<Bundle> bundles;  // compute bundles; each carries the LDP for the next
  LdpOp preload;                // LDP for bundles[0], issued one bundle earlier
  std::vector<std::uint8_t> params;
};
DenseFpeLowering lower_dense_fpe(const DenseLayer& layer, const LayerWeights& weights, const BlockPlan& plan,
                                 std::uint8_t table = 0);

// Cycle counts from the issue model alone, without executing the program.
std::uint64_t predict_cycles(const ProgramImage& img, const FpeConfig& cfg);
std::uint64_t predict_cycles(const ProgramImage& img, const HpeConfig& cfg);

}  // namespace kscope
