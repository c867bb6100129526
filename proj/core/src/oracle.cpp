#include "kscope/oracle.hpp"

#include "kscope/errors.hpp"
#include "kscope/fpe_sim.hpp"
#include "kscope/hpe_sim.hpp"

namespace kscope {

namespace {

// Bias folded in as one extra input row against a constant 1.0.
Fix8Vector affine(const Fix8Vector& x, const LayerWeights& lw, ActKind act) {
  Fix8Vector v(x.elems);
  v.elems.resize(x.size());
  v.elems.push_back(kFix8One);
  v.logical_len = v.elems.size();
  Fix8Matrix m(lw.weights.rows + 1, lw.weights.cols);
  std::copy(lw.weights.elems.begin(), lw.weights.elems.end(), m.elems.begin());
  for (std::size_t c = 0; c < m.cols; ++c) m.at(lw.weights.rows, c) = lw.bias[c];
  return gemv_ref(v, m, build_act_table(act));
}

}  // namespace

std::vector<Fix8Vector> model_oracle_trace(const ModelSpec& spec, const WeightsFile& weights,
                                           std::span<const std::uint8_t> input) {
  spec.check();
  weights.check_against(spec);
  if (input.size() != spec.input_len) {
    throw DimensionError("model expects " + std::to_string(spec.input_len) + " input bytes, got " +
                         std::to_string(input.size()));
  }
  const auto shapes = spec.shapes();
  std::vector<Fix8Vector> trace;
  Fix8Vector x;
  for (auto b : input) x.elems.push_back(byte_to_fix8(b));
  x.logical_len = x.elems.size();
  trace.push_back(x);

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Shape in = shapes[i];
    const Shape out = shapes[i + 1];
    const LayerWeights& lw = weights.layers[i];
    Fix8Vector y;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            y = affine(x, lw, l.act);
          } else if constexpr (std::is_same_v<T, Conv1DLayer>) {
            for (std::size_t p = 0; p < out.positions; ++p) {
              Fix8Vector window;
              for (std::size_t k = 0; k < l.kernel; ++k) {
                for (std::size_t c = 0; c < in.channels; ++c) {
                  window.elems.push_back(x[(p * l.stride + k) * in.channels + c]);
                }
              }
              window.logical_len = window.elems.size();
              const Fix8Vector r = affine(window, lw, l.act);
              y.elems.insert(y.elems.end(), r.elems.begin(), r.elems.begin() + static_cast<std::ptrdiff_t>(r.size()));
            }
          } else if constexpr (std::is_same_v<T, MaxPool1DLayer>) {
            for (std::size_t p = 0; p < out.positions; ++p) {
              for (std::size_t c = 0; c < in.channels; ++c) {
                std::vector<Fix8> win;
                for (std::size_t k = 0; k < l.window; ++k) win.push_back(x[(p * l.stride + k) * in.channels + c]);
                y.elems.push_back(maxpool(win));
              }
            }
          } else {
            Fix8Vector h;
            h.elems.assign(l.hidden, kFix8Zero);
            h.logical_len = l.hidden;
            for (std::size_t t = 0; t < l.timesteps; ++t) {
              Fix8Vector xt;
              for (std::size_t k = 0; k < l.in; ++k) xt.elems.push_back(x[t * l.in + k]);
              xt.elems.insert(xt.elems.end(), h.elems.begin(), h.elems.end());
              xt.logical_len = xt.elems.size();
              h = affine(xt, lw, l.act);
            }
            y = h;
          }
        },
        spec.layers[i]);
    y.logical_len = y.elems.size();
    x = y;
    trace.push_back(x);
  }
  return trace;
}

Fix8Vector model_oracle(const ModelSpec& spec, const WeightsFile& weights, std::span<const std::uint8_t> input) {
  return model_oracle_trace(spec, weights, input).back();
}

std::size_t oracle_label(const ModelSpec& spec, const WeightsFile& weights, std::span<const std::uint8_t> input) {
  return argmax(model_oracle(spec, weights, input));
}

}  // namespace kscope
