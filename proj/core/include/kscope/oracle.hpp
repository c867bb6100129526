#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kscope/blocked_linalg.hpp"
#include "kscope/model.hpp"

namespace kscope {

// Layer-by-layer reference inference over blocked_linalg. Activations are
// position-major (positions x channels). Throws DimensionError when the input
// length differs from spec.input_len.
Fix8Vector model_oracle(const ModelSpec& spec, const WeightsFile& weights, std::span<const std::uint8_t> input);

// Same, returning the activation after every layer (entry 0 is the mapped input).
std::vector<Fix8Vector> model_oracle_trace(const ModelSpec& spec, const WeightsFile& weights,
                                           std::span<const std::uint8_t> input);

// argmax of model_oracle.
std::size_t oracle_label(const ModelSpec& spec, const WeightsFile& weights, std::span<const std::uint8_t> input);

}  // namespace kscope
