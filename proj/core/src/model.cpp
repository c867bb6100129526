#include "kscope/model.hpp"

#include <charconv>
#include <optional>
#include <sstream>

#include "kscope/errors.hpp"

namespace kscope {

namespace {

std::string act_name(ActKind k) { return std::string(to_string(k)); }

struct KeyValues {
  std::vector<std::pair<std::string, std::string>> items;
  std::size_t line = 0;

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : items) {
      if (k == key) return &v;
    }
    return nullptr;
  }
  std::size_t count(std::string_view key, std::optional<std::size_t> def = std::nullopt) const {
    const std::string* v = find(key);
    if (!v) {
      if (def) return *def;
      throw SyntaxError(line, 1, "missing '" + std::string(key) + "'");
    }
    std::size_t n = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), n);
    if (ec != std::errc() || p != v->data() + v->size()) {
      throw SyntaxError(line, 1, "'" + std::string(key) + "' must be a non-negative integer");
    }
    return n;
  }
  ActKind act() const {
    const std::string* v = find("act");
    if (!v) return ActKind::identity;
    try {
      return parse_act_kind(*v);
    } catch (const std::invalid_argument& e) {
      throw SyntaxError(line, 1, e.what());
    }
  }
  bool flag(std::string_view key, bool def) const {
    const std::string* v = find(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw SyntaxError(line, 1, "'" + std::string(key) + "' must be true or false");
  }
  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, v] : items) {
      bool ok = false;
      for (auto a : keys) ok = ok || k == a;
      if (!ok) throw SyntaxError(line, 1, "unknown layer field '" + k + "'");
    }
  }
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void put_u16(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::string_view layer_name(const Layer& l) {
  static constexpr std::string_view names[] = {"dense", "conv1d", "maxpool1d", "rnn"};
  return names[l.index()];
}

Shape ModelSpec::input_shape() const {
  if (!layers.empty()) {
    if (const auto* c = std::get_if<Conv1DLayer>(&layers.front())) {
      if (c->in_ch == 0 || input_len % c->in_ch != 0) {
        throw DimensionError("input_len " + std::to_string(input_len) + " is not a multiple of in_ch");
      }
      return {input_len / c->in_ch, c->in_ch};
    }
  }
  return {1, input_len};
}

std::vector<Shape> ModelSpec::shapes() const {
  std::vector<Shape> out{input_shape()};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Shape s = out.back();
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(layer_name(layers[i])) + "): ";
    Shape next;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            if (l.in == 0 || l.out == 0) throw DimensionError(where + "zero dimension");
            if (s.size() != l.in) {
              throw DimensionError(where + "expects " + std::to_string(l.in) + " inputs, previous layer yields " +
                                   std::to_string(s.size()));
            }
            next = {1, l.out};
          } else if constexpr (std::is_same_v<T, Conv1DLayer>) {
            if (l.in_ch == 0 || l.out_ch == 0 || l.kernel == 0 || l.stride == 0) {
              throw DimensionError(where + "zero dimension");
            }
            if (s.channels != l.in_ch) {
              throw DimensionError(where + "expects " + std::to_string(l.in_ch) + " channels, got " +
                                   std::to_string(s.channels));
            }
            if (s.positions < l.kernel) throw DimensionError(where + "kernel longer than the sequence");
            next = {(s.positions - l.kernel) / l.stride + 1, l.out_ch};
          } else if constexpr (std::is_same_v<T, MaxPool1DLayer>) {
            if (l.window == 0 || l.stride == 0) throw DimensionError(where + "zero dimension");
            if (s.positions < l.window) throw DimensionError(where + "window longer than the sequence");
            next = {(s.positions - l.window) / l.stride + 1, s.channels};
          } else {
            if (l.in == 0 || l.hidden == 0 || l.timesteps == 0) throw DimensionError(where + "zero dimension");
            if (s.size() != l.in * l.timesteps) {
              throw DimensionError(where + "expects timesteps*in = " + std::to_string(l.in * l.timesteps) +
                                   " inputs, got " + std::to_string(s.size()));
            }
            next = {1, l.hidden};
          }
        },
        layers[i]);
    out.push_back(next);
  }
  return out;
}

void ModelSpec::check() const {
  if (input_len == 0) throw DimensionError("input_len must be positive");
  if (layers.empty()) throw DimensionError("model has no layers");
  if (target == Target::fpe) {
    for (const auto& l : layers) {
      if (!std::holds_alternative<DenseLayer>(l)) {
        throw std::invalid_argument("FPE models contain dense layers only (found " + std::string(layer_name(l)) + ")");
      }
    }
  }
  (void)shapes();
}

std::size_t ModelSpec::output_len() const { return shapes().back().size(); }

WeightShape ModelSpec::weight_shape(std::size_t i) const {
  return std::visit(
      [](const auto& l) -> WeightShape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) return {l.in, l.out};
        else if constexpr (std::is_same_v<T, Conv1DLayer>) return {l.kernel * l.in_ch, l.out_ch};
        else if constexpr (std::is_same_v<T, MaxPool1DLayer>) return {0, 0};
        else return {l.in + l.hidden, l.hidden};
      },
      layers.at(i));
}

bool ModelSpec::has_bias(std::size_t i) const {
  return std::visit(
      [](const auto& l) {
        if constexpr (std::is_same_v<std::decay_t<decltype(l)>, MaxPool1DLayer>) return false;
        else return l.bias;
      },
      layers.at(i));
}

std::size_t ModelSpec::param_bytes() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto ws = weight_shape(i);
    total += ws.rows * ws.cols + (has_bias(i) ? ws.cols : 0);
  }
  return total;
}

ModelSpec parse_model(std::string_view text) {
  ModelSpec spec;
  bool have_version = false, have_target = false, have_input = false;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(is, raw)) {
    ++line;
    if (const auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s.rfind("layer", 0) == 0 && (s.size() == 5 || s[5] == ' ' || s[5] == '\t')) {
      std::istringstream ls(s.substr(5));
      std::string kind;
      ls >> kind;
      KeyValues kv;
      kv.line = line;
      std::string item;
      while (ls >> item) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw SyntaxError(line, 1, "expected key=value, got '" + item + "'");
        kv.items.emplace_back(item.substr(0, eq), item.substr(eq + 1));
      }
      if (kind == "dense") {
        kv.allow({"in", "out", "act", "bias"});
        spec.layers.emplace_back(DenseLayer{kv.count("in"), kv.count("out"), kv.act(), kv.flag("bias", true)});
      } else if (kind == "conv1d") {
        kv.allow({"in_ch", "out_ch", "kernel", "stride", "act", "bias"});
        spec.layers.emplace_back(Conv1DLayer{kv.count("in_ch"), kv.count("out_ch"), kv.count("kernel"),
                                             kv.count("stride", 1), kv.act(), kv.flag("bias", true)});
      } else if (kind == "maxpool1d") {
        kv.allow({"window", "stride"});
        const std::size_t w = kv.count("window");
        spec.layers.emplace_back(MaxPool1DLayer{w, kv.count("stride", w)});
      } else if (kind == "rnn") {
        kv.allow({"in", "hidden", "timesteps", "act", "bias"});
        spec.layers.emplace_back(
            RnnLayer{kv.count("in"), kv.count("hidden"), kv.count("timesteps"), kv.act(), kv.flag("bias", true)});
      } else {
        throw SyntaxError(line, 1, "unknown layer kind '" + kind + "'");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw SyntaxError(line, 1, "expected 'key = value' or 'layer ...'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key == "version") {
      if (value != std::to_string(ModelSpec::kVersion)) {
        throw SyntaxError(line, 1, "unsupported model version '" + value + "'");
      }
      have_version = true;
    } else if (key == "name") {
      spec.name = value;
    } else if (key == "target") {
      try {
        spec.target = parse_target(value);
      } catch (const std::invalid_argument& e) {
        throw SyntaxError(line, 1, e.what());
      }
      have_target = true;
    } else if (key == "input_len") {
      std::size_t n = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), n);
      if (ec != std::errc() || p != value.data() + value.size()) throw SyntaxError(line, 1, "bad input_len");
      spec.input_len = n;
      have_input = true;
    } else {
      throw SyntaxError(line, 1, "unknown key '" + key + "'");
    }
  }
  if (!have_version) throw SyntaxError(line, 1, "missing 'version'");
  if (!have_target) throw SyntaxError(line, 1, "missing 'target'");
  if (!have_input) throw SyntaxError(line, 1, "missing 'input_len'");
  return spec;
}

std::string serialize_model(const ModelSpec& spec) {
  std::ostringstream os;
  os << "version = " << ModelSpec::kVersion << '\n';
  if (!spec.name.empty()) os << "name = " << spec.name << '\n';
  os << "target = " << to_string(spec.target) << '\n';
  os << "input_len = " << spec.input_len << '\n';
  for (const auto& layer : spec.layers) {
    os << "layer " << layer_name(layer);
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            os << " in=" << l.in << " out=" << l.out << " act=" << act_name(l.act) << " bias=" << (l.bias ? "true" : "false");
          } else if constexpr (std::is_same_v<T, Conv1DLayer>) {
            os << " in_ch=" << l.in_ch << " out_ch=" << l.out_ch << " kernel=" << l.kernel << " stride=" << l.stride
               << " act=" << act_name(l.act) << " bias=" << (l.bias ? "true" : "false");
          } else if constexpr (std::is_same_v<T, MaxPool1DLayer>) {
            os << " window=" << l.window << " stride=" << l.stride;
          } else {
            os << " in=" << l.in << " hidden=" << l.hidden << " timesteps=" << l.timesteps << " act=" << act_name(l.act)
               << " bias=" << (l.bias ? "true" : "false");
          }
        },
        layer);
    os << '\n';
  }
  return os.str();
}

std::uint32_t fnv1a32(std::span<const std::uint8_t> bytes) {
  std::uint32_t h = 2166136261U;
  for (auto b : bytes) {
    h ^= b;
    h *= 16777619U;
  }
  return h;
}

std::uint32_t model_hash(const ModelSpec& spec) {
  // The name is a label and does not change the hash.
  ModelSpec copy = spec;
  copy.name.clear();
  const std::string text = serialize_model(copy);
  return fnv1a32(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void WeightsFile::check_against(const ModelSpec& spec) const {
  if (layers.size() != spec.layers.size()) {
    throw DimensionError("weights have " + std::to_string(layers.size()) + " layers, model has " +
                         std::to_string(spec.layers.size()));
  }
  if (model_hash != kscope::model_hash(spec)) throw FormatError("weights were produced for a different model (hash mismatch)");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto ws = spec.weight_shape(i);
    const auto& lw = layers[i];
    if (lw.weights.rows != ws.rows || lw.weights.cols != ws.cols || lw.bias.size() != ws.cols) {
      throw DimensionError("layer " + std::to_string(i) + " weights are " + std::to_string(lw.weights.rows) + "x" +
                           std::to_string(lw.weights.cols) + ", model expects " + std::to_string(ws.rows) + "x" +
                           std::to_string(ws.cols));
    }
    if (!spec.has_bias(i)) {
      for (auto b : lw.bias) {
        if (b != kFix8Zero) throw FormatError("layer " + std::to_string(i) + " has no bias but nonzero bias bytes");
      }
    }
  }
}

std::vector<std::uint8_t> encode_weights(const WeightsFile& w) {
  std::vector<std::uint8_t> out{'K', 'W', 'G', 'T', WeightsFile::kVersion};
  put_u32(out, w.model_hash);
  put_u16(out, w.layers.size());
  for (const auto& l : w.layers) {
    if (l.weights.rows > 0xFFFF || l.weights.cols > 0xFFFF) throw DimensionError("layer too large for KWGT");
    if (l.bias.size() != l.weights.cols) throw DimensionError("bias length must equal weight columns");
    put_u16(out, l.weights.rows);
    put_u16(out, l.weights.cols);
    for (auto v : l.weights.elems) out.push_back(v.bits());
    for (auto v : l.bias) out.push_back(v.bits());
  }
  return out;
}

WeightsFile decode_weights(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw FormatError(std::string("truncated weights file: ") + what);
  };
  auto u16 = [&](const char* what) {
    need(2, what);
    const std::size_t v = bytes[pos] | (static_cast<std::size_t>(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  };
  need(4, "magic");
  if (bytes[0] != 'K' || bytes[1] != 'W' || bytes[2] != 'G' || bytes[3] != 'T') throw FormatError("bad magic (not a KWGT file)");
  pos = 4;
  need(1, "version");
  if (bytes[pos] != WeightsFile::kVersion) throw FormatError("unsupported KWGT version " + std::to_string(bytes[pos]));
  ++pos;
  need(4, "model hash");
  WeightsFile w;
  w.model_hash = static_cast<std::uint32_t>(bytes[pos]) | (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
                 (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) | (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
  pos += 4;
  const std::size_t count = u16("layer count");
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t rows = u16("layer rows");
    const std::size_t cols = u16("layer cols");
    need(rows * cols + cols, "layer data");
    LayerWeights lw;
    lw.weights = Fix8Matrix(rows, cols);
    for (std::size_t k = 0; k < rows * cols; ++k) lw.weights.elems[k] = Fix8::from_bits(bytes[pos++]);
    for (std::size_t k = 0; k < cols; ++k) lw.bias.push_back(Fix8::from_bits(bytes[pos++]));
    w.layers.push_back(std::move(lw));
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after the last layer");
  return w;
}

WeightsFile zero_weights(const ModelSpec& spec) {
  WeightsFile w;
  w.model_hash = model_hash(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto ws = spec.weight_shape(i);
    w.layers.push_back({Fix8Matrix(ws.rows, ws.cols), std::vector<Fix8>(ws.cols)});
  }
  return w;
}

}  // namespace kscope
