#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kscope/blocked_linalg.hpp"
#include "kscope/fix8.hpp"
#include "kscope/isa.hpp"

namespace kscope {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  ActKind act = ActKind::identity;
  bool bias = true;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Valid (unpadded) 1-D convolution over (positions, channels).
struct Conv1DLayer {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  ActKind act = ActKind::identity;
  bool bias = true;
  friend bool operator==(const Conv1DLayer&, const Conv1DLayer&) = default;
};

struct MaxPool1DLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPool1DLayer&, const MaxPool1DLayer&) = default;
};

// h_t = act(x_t . Wx + h_{t-1} . Wh + b), h_0 = 0; output is h_T.
struct RnnLayer {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t timesteps = 1;
  ActKind act = ActKind::identity;
  bool bias = true;
  friend bool operator==(const RnnLayer&, const RnnLayer&) = default;
};

using Layer = std::variant<DenseLayer, Conv1DLayer, MaxPool1DLayer, RnnLayer>;

std::string_view layer_name(const Layer& l);

// Activation shape: positions x channels, stored position-major.
struct Shape {
  std::size_t positions = 1;
  std::size_t channels = 0;
  std::size_t size() const { return positions * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Weight matrix shape of a layer (rows x cols); 0 x 0 for pooling.
struct WeightShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const WeightShape&, const WeightShape&) = default;
};

struct ModelSpec {
  static constexpr int kVersion = 1;

  std::string name;
  Target target = Target::fpe;
  std::size_t input_len = 64;
  std::vector<Layer> layers;

  // Throws DimensionError / std::invalid_argument on any inconsistency.
  void check() const;
  // Shape entering each layer plus the final output shape (layers.size() + 1 entries).
  std::vector<Shape> shapes() const;
  Shape input_shape() const;
  std::size_t output_len() const;
  WeightShape weight_shape(std::size_t layer) const;
  bool has_bias(std::size_t layer) const;
  // Weight + bias bytes across all layers.
  std::size_t param_bytes() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Text format:
//   version = 1
//   name = mlp-e            (optional)
//   target = fpe|hpe
//   input_len = 64
//   layer dense in=64 out=32 act=relu [bias=true]
//   layer conv1d in_ch=1 out_ch=8 kernel=3 [stride=1] act=relu [bias=true]
//   layer maxpool1d window=2 [stride=2]
//   layer rnn in=8 hidden=32 timesteps=8 act=relu [bias=true]
ModelSpec parse_model(std::string_view text);
std::string serialize_model(const ModelSpec& spec);
std::uint32_t fnv1a32(std::span<const std::uint8_t> bytes);
std::uint32_t model_hash(const ModelSpec& spec);

struct LayerWeights {
  Fix8Matrix weights;       // rows x cols per WeightShape
  std::vector<Fix8> bias;   // cols entries, all zero when the layer has no bias
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct WeightsFile {
  static constexpr std::uint8_t kVersion = 1;

  std::uint32_t model_hash = 0;
  std::vector<LayerWeights> layers;

  // Throws DimensionError on shape mismatch, FormatError on hash mismatch or nonzero
  // bias bytes for a bias-free layer.
  void check_against(const ModelSpec& spec) const;
  friend bool operator==(const WeightsFile&, const WeightsFile&) = default;
};

// KWGT: "KWGT", u8 version, u32 model hash, u16 layer count, then per layer
// u16 rows, u16 cols, rows*cols weight bytes (row-major), cols bias bytes. Little-endian.
std::vector<std::uint8_t> encode_weights(const WeightsFile& w);
WeightsFile decode_weights(std::span<const std::uint8_t> bytes);

// Zero weights with the right shapes for `spec`.
WeightsFile zero_weights(const ModelSpec& spec);

}  // namespace kscope
