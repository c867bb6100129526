#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kscope/model.hpp"

namespace kscope::fixtures {

// Deterministic weights: entries drawn from a seeded mt19937_64 with magnitude scaled
// to the layer's fan-in so activations stay out of saturation. Identical on every platform.
WeightsFile make_weights(const ModelSpec& spec, std::uint64_t seed = 1);

// 3-layer FPE MLPs sized 6.4 KB, 4.4 KB and 2.1 KB of parameters.
ModelSpec mlp_e();
ModelSpec mlp_c();
ModelSpec mlp_m();
// HPE models: a 280.5 KB 1-D CNN and a small recurrent classifier.
ModelSpec cnn_e();
ModelSpec rnn_m();

std::vector<std::string> names();
// Throws std::invalid_argument for an unknown name.
ModelSpec by_name(std::string_view name);

}  // namespace kscope::fixtures
