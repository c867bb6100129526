#include "kscope/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace kscope::fixtures {

namespace {

ModelSpec spec(std::string name, Target target, std::size_t input_len, std::vector<Layer> layers) {
  ModelSpec m;
  m.name = std::move(name);
  m.target = target;
  m.input_len = input_len;
  m.layers = std::move(layers);
  m.check();
  return m;
}

Fix8 draw(std::mt19937_64& rng, int amplitude) {
  const auto span = static_cast<std::uint64_t>(2 * amplitude + 1);
  return Fix8::from_raw(static_cast<std::int8_t>(static_cast<int>(rng() % span) - amplitude));
}

}  // namespace

WeightsFile make_weights(const ModelSpec& m, std::uint64_t seed) {
  WeightsFile w = zero_weights(m);
  std::mt19937_64 rng(seed ^ (std::uint64_t{w.model_hash} << 17));
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& lw = w.layers[i];
    if (lw.weights.rows == 0) continue;
    const double fan_in = static_cast<double>(lw.weights.rows);
    const int amplitude = std::clamp(static_cast<int>(std::lround(40.0 / std::sqrt(fan_in))), 1, 24);
    for (auto& x : lw.weights.elems) x = draw(rng, amplitude);
    if (m.has_bias(i)) {
      for (auto& b : lw.bias) b = draw(rng, 8);
    }
  }
  return w;
}

ModelSpec mlp_e() {
  return spec("mlp-e", Target::fpe, 64,
              {DenseLayer{64, 84, ActKind::relu}, DenseLayer{84, 12, ActKind::relu},
               DenseLayer{12, 6, ActKind::identity}});
}

ModelSpec mlp_c() {
  return spec("mlp-c", Target::fpe, 64,
              {DenseLayer{64, 48, ActKind::relu}, DenseLayer{48, 24, ActKind::relu},
               DenseLayer{24, 9, ActKind::identity}});
}

ModelSpec mlp_m() {
  return spec("mlp-m", Target::fpe, 64,
              {DenseLayer{64, 24, ActKind::relu}, DenseLayer{24, 20, ActKind::relu},
               DenseLayer{20, 6, ActKind::identity}});
}

ModelSpec cnn_e() {
  return spec("cnn-e", Target::hpe, 64,
              {Conv1DLayer{1, 32, 5, 2, ActKind::relu}, Conv1DLayer{32, 96, 3, 2, ActKind::relu},
               Conv1DLayer{96, 192, 2, 1, ActKind::relu}, DenseLayer{13 * 192, 96, ActKind::relu},
               DenseLayer{96, 10, ActKind::identity}});
}

ModelSpec rnn_m() {
  return spec("rnn-m", Target::hpe, 64,
              {RnnLayer{8, 40, 8, ActKind::relu}, DenseLayer{40, 6, ActKind::identity}});
}

std::vector<std::string> names() { return {"mlp-e", "mlp-c", "mlp-m", "cnn-e", "rnn-m"}; }

ModelSpec by_name(std::string_view name) {
  if (name == "mlp-e") return mlp_e();
  if (name == "mlp-c") return mlp_c();
  if (name == "mlp-m") return mlp_m();
  if (name == "cnn-e") return cnn_e();
  if (name == "rnn-m") return rnn_m();
  throw std::invalid_argument("unknown fixture model '" + std::string(name) + "'");
}

}  // namespace kscope::fixtures
