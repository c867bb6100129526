#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <random>
#include <vector>

#include "kscope/blocked_linalg.hpp"
#include "kscope/fix8.hpp"
#include "kscope/isa.hpp"
#include "kscope/model.hpp"

namespace kscope::test {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

Rational exact(Fix8 v);
Rational exact(WideAcc v);

// Nearest multiple of 1/32, ties away from zero, clamped to [-4, 127/32].
Fix8 exact_encode(const Rational& x);

// Independent scalar GEMV: exact integer sums, exact rounding, then the table.
std::vector<Fix8> scalar_gemv(const std::vector<Fix8>& v, const Fix8Matrix& m, const ActTable& act);

Fix8 random_fix8(std::mt19937_64& rng);
Fix8Vector random_vector(std::mt19937_64& rng, std::size_t n);
Fix8Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols);
// Small-magnitude weights keep activations away from saturation so tests exercise real arithmetic.
Fix8Matrix random_weights(std::mt19937_64& rng, std::size_t rows, std::size_t cols);
std::vector<std::uint8_t> random_bytes(std::mt19937_64& rng, std::size_t n);
WeightsFile random_model_weights(std::mt19937_64& rng, const ModelSpec& spec);

// Random model within default PE capacities.
ModelSpec random_fpe_model(std::mt19937_64& rng);
ModelSpec random_hpe_model(std::mt19937_64& rng);

// Random legal bundle / image for `t`; every field within its encodable range.
Bundle random_bundle(std::mt19937_64& rng, Target t);
ProgramImage random_image(std::mt19937_64& rng, Target t, std::size_t bundles);

}  // namespace kscope::test
