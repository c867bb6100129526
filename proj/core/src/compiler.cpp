#include "kscope/compiler.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <map>
#include <stdexcept>

#include "kscope/errors.hpp"

namespace kscope {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::string tag(std::size_t layer) { return "L" + std::to_string(layer); }

class TableSlots {
 public:
  explicit TableSlots(ProgramImage& img) : img_(img) {}

  std::uint8_t slot(ActKind k) {
    for (std::size_t i = 0; i < used_.size(); ++i) {
      if (used_[i] == k) return static_cast<std::uint8_t>(i);
    }
    if (used_.size() == kNumActTables) throw CapacityError("activation tables", "more than 4 activation tables");
    img_.act_tables[used_.size()] = build_act_table(k);
    used_.push_back(k);
    return static_cast<std::uint8_t>(used_.size() - 1);
  }

 private:
  ProgramImage& img_;
  std::vector<ActKind> used_;
};

// ---------------------------------------------------------------- FPE

struct FpeTerm {
  bool bias = false;
  std::size_t k = 0;  // input block
};

struct FpeDst {
  FpeDest kind = FpeDest::regfile;
  std::size_t base = 0;
};

// Row-major rows x 8 slice of the weights (or the 8 biases) for output block ob.
std::vector<std::uint8_t> term_bytes(const LayerWeights& w, std::size_t ob, const FpeTerm& t) {
  const std::size_t n = w.weights.rows;
  const std::size_t q = w.weights.cols;
  const std::size_t c0 = ob * kFpeBlockCols;
  std::vector<std::uint8_t> out;
  auto row = [&](auto value) {
    for (std::size_t c = 0; c < kFpeBlockCols; ++c) out.push_back(c0 + c < q ? value(c0 + c).bits() : 0);
  };
  if (t.bias) {
    row([&](std::size_t c) { return w.bias[c]; });
    return out;
  }
  const std::size_t r0 = t.k * kFpeBlockRows;
  const std::size_t rows = std::min(kFpeBlockRows, n - r0);
  for (std::size_t r = 0; r < rows; ++r) row([&](std::size_t c) { return w.weights.at(r0 + r, c); });
  return out;
}

class FpeSchedule {
 public:
  FpeSchedule(ProgramImage& img, std::size_t regfile_words, std::size_t depth)
      : img_(img), ready_(regfile_words, 0), depth_(depth) {}

  void set_ready(std::size_t word, std::uint64_t cycle) { ready_[word] = cycle; }
  void set_one(std::size_t word, std::uint64_t ready, bool load_in_bundle1) {
    one_word_ = word;
    one_ready_ = ready;
    load_one_ = load_in_bundle1;
  }

  void layer(const DenseLayer& l, const LayerWeights& w, std::size_t src, FpeDst dst, std::uint8_t table) {
    const std::size_t x = ceil_div(l.in, kFpeBlockRows);
    const std::size_t y = ceil_div(l.out, kFpeBlockCols);
    for (std::size_t ob = 0; ob < y; ++ob) {
      std::vector<FpeTerm> terms;
      if (l.bias) terms.push_back({true, 0});
      for (std::size_t k = 0; k < x; ++k) terms.push_back({false, k});
      bool first = true;
      while (!terms.empty()) {
        const std::uint64_t cur = img_.bundles.size();
        auto it = std::find_if(terms.begin(), terms.end(), [&](const FpeTerm& t) {
          return (t.bias ? one_ready_ : ready_[src + t.k]) <= cur;
        });
        if (it == terms.end()) {
          push(Bundle{});
          continue;
        }
        MvOp m;
        m.op = terms.size() == 1 ? Opcode::MVAA : first ? Opcode::MV : Opcode::MVA;
        m.src = static_cast<std::uint8_t>(it->bias ? one_word_ : src + it->k);
        if (m.op == Opcode::MVAA) {
          m.table = table;
          m.dst_kind = dst.kind;
          m.dst = static_cast<std::uint8_t>(dst.base + ob / 4);
          m.dst_lane = static_cast<std::uint8_t>((ob % 4) * kFpeBlockCols);
          if (dst.kind == FpeDest::regfile) ready_[m.dst] = std::max(ready_[m.dst], cur + depth_);
        }
        emit(m, term_bytes(w, ob, *it));
        terms.erase(it);
        first = false;
      }
    }
  }

 private:
  void push(Bundle b) {
    if (img_.bundles.size() == 1 && load_one_) b.data = LdrOp{static_cast<std::uint8_t>(one_word_), LdrSource::one, 0, 1};
    img_.bundles.push_back(b);
  }

  // The op's parameters are loaded by the previous bundle's param slot.
  void emit(MvOp m, const std::vector<std::uint8_t>& bytes) {
    m.pbuf = pbuf_;
    img_.bundles.back().param = LdpOp{pbuf_, static_cast<std::uint32_t>(img_.param_image.size()),
                                      static_cast<std::uint16_t>(bytes.size())};
    img_.param_image.insert(img_.param_image.end(), bytes.begin(), bytes.end());
    pbuf_ ^= 1;
    push(Bundle{m, NopOp{}, NopOp{}});
  }

  ProgramImage& img_;
  std::vector<std::uint64_t> ready_;
  std::size_t depth_;
  std::size_t one_word_ = 0;
  std::uint64_t one_ready_ = 0;
  bool load_one_ = false;
  std::uint8_t pbuf_ = 0;
};

CompiledProgram compile_fpe(const ModelSpec& spec, const WeightsFile& weights, const FpeConfig& cfg) {
  cfg.check();
  if (spec.input_len > cfg.input_bytes) {
    throw CapacityError("input buffer", "input buffer: model reads " + std::to_string(spec.input_len) +
                                            " bytes, FPE input buffer holds " + std::to_string(cfg.input_bytes));
  }
  const std::size_t nl = spec.layers.size();
  std::vector<DenseLayer> layers;
  for (const auto& l : spec.layers) layers.push_back(std::get<DenseLayer>(l));

  // Activations ping-pong: even layers read region X, odd layers read region Y.
  std::size_t x_words = ceil_div(spec.input_len, kLanes);
  std::size_t y_words = 0;
  bool any_bias = false;
  for (std::size_t i = 0; i < nl; ++i) {
    any_bias = any_bias || layers[i].bias;
    if (i + 1 == nl) continue;
    auto& region = i % 2 == 0 ? y_words : x_words;
    region = std::max(region, ceil_div(layers[i].out, kLanes));
  }
  const std::size_t words = x_words + y_words + (any_bias ? 1 : 0);
  if (words > cfg.regfile_words) {
    throw CapacityError("regfile", "regfile: activations need " + std::to_string(words) + " words, FPE has " +
                                       std::to_string(cfg.regfile_words));
  }
  const std::size_t out_len = layers.back().out;
  if (out_len > cfg.out_words * kLanes) {
    throw CapacityError("output buffer", "output buffer: " + std::to_string(out_len) + " outputs exceed " +
                                             std::to_string(cfg.out_words * kLanes));
  }

  CompiledProgram cp;
  cp.input_len = spec.input_len;
  cp.output_len = out_len;
  ProgramImage& img = cp.image;
  img.target = Target::fpe;
  TableSlots tables(img);
  const std::size_t in_words = ceil_div(spec.input_len, kLanes);
  img.bundles.push_back(Bundle{StartOp{static_cast<std::uint16_t>(spec.input_len)}, NopOp{},
                               LdrOp{0, LdrSource::input, 0, static_cast<std::uint8_t>(in_words)}});

  FpeSchedule sched(img, cfg.regfile_words, cfg.pipeline_depth);
  for (std::size_t w = 0; w < in_words; ++w) sched.set_ready(w, 1);
  const std::size_t one_word = x_words + y_words;
  if (any_bias) sched.set_one(one_word, 2, true);
  else sched.set_one(0, UINT64_MAX, false);

  for (std::size_t i = 0; i < nl; ++i) {
    const std::size_t src = i % 2 == 0 ? 0 : x_words;
    const FpeDst dst = i + 1 == nl ? FpeDst{FpeDest::out, 0} : FpeDst{FpeDest::regfile, i % 2 == 0 ? x_words : 0};
    const std::size_t p0 = img.param_image.size();
    sched.layer(layers[i], weights.layers[i], src, dst, tables.slot(layers[i].act));
    cp.layout.push_back({tag(i) + ".params", "pCache", p0, img.param_image.size() - p0});
  }
  img.bundles.push_back(Bundle{FinOp{1, static_cast<std::uint16_t>(out_len)}, NopOp{}, NopOp{}});

  cp.layout.push_back({"input", "regfile", 0, in_words});
  cp.layout.push_back({"act.even", "regfile", 0, x_words});
  if (y_words) cp.layout.push_back({"act.odd", "regfile", x_words, y_words});
  if (any_bias) cp.layout.push_back({"one", "regfile", one_word, 1});
  cp.layout.push_back({"output", "out", 0, ceil_div(out_len, kLanes)});

  if (img.param_image.size() > cfg.pcache_bytes) {
    throw CapacityError("pCache", "pCache: " + std::to_string(img.param_image.size()) + " parameter bytes exceed " +
                                      std::to_string(cfg.pcache_bytes));
  }
  if (img.code_bytes() > cfg.icache_bytes) {
    throw CapacityError("iCache", "iCache: " + std::to_string(img.bundles.size()) + " bundles (" +
                                      std::to_string(img.code_bytes()) + " bytes) exceed " +
                                      std::to_string(cfg.icache_bytes));
  }
  require_valid(img, cfg.limits());
  cp.predicted_cycles = predict_cycles(img, cfg);
  return cp;
}

// ---------------------------------------------------------------- HPE

constexpr std::int32_t kNoRow = -1;
constexpr std::int32_t kBiasRow = -2;

// MM source: `rows` consecutive bank-1 words; lane i multiplies weight row wrow[i].
struct XTile {
  std::size_t src = 0;
  std::size_t rows = 0;
  std::array<std::int32_t, kLanes> wrow;
  XTile(std::size_t s, std::size_t r) : src(s), rows(r) { wrow.fill(kNoRow); }
};

// Activation resident in bank 1: channel tile ct occupies `positions` rows at base[ct].
struct Act {
  std::size_t positions = 0;
  std::size_t channels = 0;
  std::vector<std::size_t> base;
};

class RowAlloc {
 public:
  explicit RowAlloc(std::size_t words) { free_[0] = words; }

  std::size_t take(std::size_t n, const std::string& what) {
    for (auto it = free_.begin(); it != free_.end(); ++it) {
      if (it->second < n) continue;
      const std::size_t off = it->first;
      const std::size_t size = it->second;
      free_.erase(it);
      if (size > n) free_[off + n] = size - n;
      return off;
    }
    throw CapacityError("bank1", "bank1: no room for " + what + " (" + std::to_string(n) + " words)");
  }

  void give(std::size_t off, std::size_t n) {
    if (n == 0) return;
    auto [it, ok] = free_.emplace(off, n);
    if (auto next = std::next(it); next != free_.end() && off + n == next->first) {
      it->second += next->second;
      free_.erase(next);
    }
    if (it != free_.begin()) {
      auto prev = std::prev(it);
      if (prev->first + prev->second == off) {
        prev->second += it->second;
        free_.erase(it);
      }
    }
  }

 private:
  std::map<std::size_t, std::size_t> free_;
};

std::vector<std::uint8_t> weight_tile(const XTile& x, const LayerWeights& w, std::size_t j) {
  std::vector<std::uint8_t> t(kHpeTileBytes, 0);
  const std::size_t q = w.weights.cols;
  for (std::size_t lane = 0; lane < kLanes; ++lane) {
    const std::int32_t r = x.wrow[lane];
    if (r == kNoRow) continue;
    for (std::size_t c = 0; c < kHpeTileDim && kHpeTileDim * j + c < q; ++c) {
      const std::size_t col = kHpeTileDim * j + c;
      const Fix8 v = r == kBiasRow ? w.bias[col] : w.weights.at(static_cast<std::size_t>(r), col);
      t[lane * kHpeTileDim + c] = v.bits();
    }
  }
  return t;
}

std::vector<std::uint8_t> identity_tile(std::size_t width) {
  std::vector<std::uint8_t> t(kHpeTileBytes, 0);
  for (std::size_t i = 0; i < width; ++i) t[i * kHpeTileDim + i] = kFix8One.bits();
  return t;
}

struct Final {
  Opcode op = Opcode::ACCA;
  HpeDest kind = HpeDest::bank1;
  std::vector<std::size_t> dst;  // per column tile
  std::uint8_t table = 0;
  std::uint8_t window = 1;
  std::uint8_t stride = 1;
};

struct KTile {
  XTile x;
  std::vector<std::uint8_t> bytes;
};

class HpeBuilder {
 public:
  HpeBuilder(const HpeConfig& cfg, ProgramImage& img) : cfg_(cfg), img_(img), alloc_(cfg.bank_words) {
    region_ = cfg.bank_words / 4;
  }

  std::size_t take(std::size_t n, const std::string& what) {
    const std::size_t off = alloc_.take(n, what);
    layout.push_back({what, "bank1", off, n});
    return off;
  }
  void give(std::size_t off, std::size_t n) { alloc_.give(off, n); }

  void gather(LdrSource src, std::size_t base, std::size_t stride, std::size_t dst, std::size_t lane,
              std::size_t width, std::size_t rows) {
    const bool fixed = src == LdrSource::one || src == LdrSource::zero;
    std::size_t r = 0;
    while (r < rows) {
      const std::size_t n = stride > 63 && !fixed ? 1 : std::min<std::size_t>(64, rows - r);
      GatherOp g;
      g.src = src;
      if (!fixed) {
        g.src_base = static_cast<std::uint16_t>(base + r * stride);
        g.src_stride = static_cast<std::uint8_t>(n == 1 ? 0 : stride);
      }
      g.dst = static_cast<std::uint16_t>(dst + r);
      g.dst_lane = static_cast<std::uint8_t>(lane);
      g.width = static_cast<std::uint8_t>(width);
      g.rows = static_cast<std::uint8_t>(n);
      ops_.push_back(Op{ComputeOp{NopOp{}}, DataOp{g}, 0});
      r += n;
    }
  }

  // Sum of tiles[k] products for column tile j, merged by the final op.
  void chain(const std::vector<KTile>& tiles, std::size_t rows, std::size_t j, const Final& f) {
    if (rows > region_ || rows > 256) {
      throw CapacityError("bank2", "bank2: " + std::to_string(rows) + " partial-sum rows exceed the " +
                                       std::to_string(std::min<std::size_t>(region_, 256)) + "-row region");
    }
    const std::size_t pair = (j % 2) * 2 * region_;
    const std::array<std::size_t, 2> reg{pair, pair + region_};
    const std::size_t k = tiles.size();
    std::vector<std::uint8_t> bank(k);
    const auto l = static_cast<std::uint16_t>(rows);
    for (std::size_t i = 0; i < k; ++i) {
      bank[i] = static_cast<std::uint8_t>(2 + mm_count_ % 2);
      ++mm_count_;
      const std::size_t off = i == 0 ? reg[0] : reg[(i - 1) % 2];
      ops_.push_back(Op{MmOp{static_cast<std::uint16_t>(tiles[i].x.src), l, bank[i], static_cast<std::uint16_t>(off)},
                        NopOp{}, tile(tiles[i].bytes)});
      if (i >= 1 && i + 1 < k) {
        AccOp a;
        a.op = Opcode::ACC;
        a.offset = static_cast<std::uint16_t>(reg[(i - 1) % 2]);
        a.operands = AccOperands::both;
        a.dst_kind = bank[i] == 2 ? HpeDest::bank2 : HpeDest::bank3;
        a.dst = static_cast<std::uint16_t>(reg[i % 2]);
        a.len = l;
        ops_.push_back(Op{a, NopOp{}, 0});
      }
    }
    AccOp a;
    a.op = f.op;
    if (k == 1) {
      a.offset = static_cast<std::uint16_t>(reg[0]);
      a.operands = bank[0] == 2 ? AccOperands::bank2 : AccOperands::bank3;
    } else {
      a.offset = static_cast<std::uint16_t>(reg[(k - 2) % 2]);
      a.operands = AccOperands::both;
    }
    a.dst_kind = f.kind;
    a.dst = static_cast<std::uint16_t>(f.dst[j]);
    a.len = l;
    a.table = f.table;
    a.pool_window = f.window;
    a.pool_stride = f.stride;
    ops_.push_back(Op{a, NopOp{}, 0});
  }

  std::uint32_t tile(const std::vector<std::uint8_t>& bytes) {
    auto [it, fresh] = tiles_.emplace(bytes, static_cast<std::uint32_t>(tiles_.size()));
    if (fresh) img_.param_image.insert(img_.param_image.end(), bytes.begin(), bytes.end());
    return it->second;
  }
  std::size_t tile_count() const { return tiles_.size(); }

  void finish(std::uint16_t in_len, FinOp fin) {
    img_.bundles.push_back(Bundle{StartOp{in_len}, NopOp{}, NopOp{}});
    std::vector<std::size_t> mm_at;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      if (std::holds_alternative<MmOp>(ops_[i].compute)) mm_at.push_back(i);
    }
    if (!mm_at.empty()) img_.bundles[0].param = LdpOp{0, ops_[mm_at[0]].tile, 0};
    std::size_t next_mm = 1;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      const Op& op = ops_[i];
      if (std::holds_alternative<GatherOp>(op.data) && img_.bundles.size() == 1 &&
          std::holds_alternative<NopOp>(img_.bundles[0].data)) {
        img_.bundles[0].data = op.data;
        continue;
      }
      Bundle b{op.compute, NopOp{}, op.data};
      if (std::holds_alternative<MmOp>(op.compute) && next_mm < mm_at.size()) {
        b.param = LdpOp{0, ops_[mm_at[next_mm++]].tile, 0};
      }
      img_.bundles.push_back(b);
    }
    img_.bundles.push_back(Bundle{fin, NopOp{}, NopOp{}});
  }

  std::vector<LayoutEntry> layout;

 private:
  struct Op {
    ComputeOp compute;
    DataOp data;
    std::uint32_t tile = 0;
  };

  const HpeConfig& cfg_;
  ProgramImage& img_;
  RowAlloc alloc_;
  std::size_t region_ = 0;
  std::size_t mm_count_ = 0;
  std::vector<Op> ops_;
  std::map<std::vector<std::uint8_t>, std::uint32_t> tiles_;
};

// Tiles covering flattened elements [e0, e0 + n) of a resident activation; element
// e0 + i multiplies weight row row_off + i.
std::vector<XTile> flat_tiles(const Act& a, std::size_t e0, std::size_t n, std::size_t row_off) {
  std::vector<XTile> out;
  const std::size_t c = a.channels;
  if (a.positions == 1) {
    if (e0 % kLanes != 0) throw std::invalid_argument("activation slice does not start on a 32-lane boundary");
    for (std::size_t ct = e0 / kLanes; ct * kLanes < std::min(e0 + n, c); ++ct) {
      XTile x(a.base[ct], 1);
      for (std::size_t i = 0; i < kLanes; ++i) {
        const std::size_t e = ct * kLanes + i;
        if (e < e0 + n && e < c) x.wrow[i] = static_cast<std::int32_t>(e - e0 + row_off);
      }
      out.push_back(x);
    }
    return out;
  }
  if (e0 % c != 0 || n % c != 0) {
    throw std::invalid_argument("activation slice splits a position (" + std::to_string(n) + " elements over " +
                                std::to_string(c) + " channels)");
  }
  for (std::size_t p = e0 / c; p < (e0 + n) / c; ++p) {
    for (std::size_t ct = 0; ct * kLanes < c; ++ct) {
      XTile x(a.base[ct] + p, 1);
      for (std::size_t i = 0; i < kLanes && ct * kLanes + i < c; ++i) {
        x.wrow[i] = static_cast<std::int32_t>(p * c + ct * kLanes + i - e0 + row_off);
      }
      out.push_back(x);
    }
  }
  return out;
}

std::vector<KTile> with_weights(const std::vector<XTile>& xs, const LayerWeights& w, std::size_t j) {
  std::vector<KTile> out;
  for (const auto& x : xs) out.push_back({x, weight_tile(x, w, j)});
  return out;
}

CompiledProgram compile_hpe(const ModelSpec& spec, const WeightsFile& weights, const HpeConfig& cfg) {
  cfg.check();
  if (spec.input_len > cfg.input_bytes) {
    throw CapacityError("input buffer", "input buffer: model reads " + std::to_string(spec.input_len) +
                                            " bytes, HPE input buffer holds " + std::to_string(cfg.input_bytes));
  }
  CompiledProgram cp;
  cp.input_len = spec.input_len;
  cp.output_len = spec.output_len();
  ProgramImage& img = cp.image;
  img.target = Target::hpe;
  TableSlots tables(img);
  HpeBuilder hb(cfg, img);
  const auto shapes = spec.shapes();
  const std::size_t nl = spec.layers.size();

  // Rows each layer streams through the array (conv: output positions).
  std::size_t ones_rows = 0;
  for (std::size_t i = 0; i < nl; ++i) {
    if (!spec.has_bias(i)) continue;
    const std::size_t rows = std::holds_alternative<Conv1DLayer>(spec.layers[i]) ? shapes[i + 1].positions : 1;
    ones_rows = std::max(ones_rows, rows);
  }
  std::size_t ones = 0;
  if (ones_rows) {
    ones = hb.take(ones_rows, "ones");
    hb.gather(LdrSource::one, 0, 0, ones, 0, kLanes, ones_rows);
  }
  auto bias_tile = [&](std::size_t rows) {
    XTile x(ones, rows);
    x.wrow[0] = kBiasRow;
    return x;
  };

  std::optional<Act> cur;  // empty while the input buffer is the source
  std::vector<std::pair<std::size_t, std::size_t>> cur_regions;

  // Copies the input, viewed as (positions, channels), into bank 1; channel tile 0 is gathered last.
  auto materialize = [&](std::size_t positions, std::size_t channels) {
    Act a;
    a.positions = positions;
    a.channels = channels;
    const std::size_t tiles = ceil_div(channels, kLanes);
    for (std::size_t ct = 0; ct < tiles; ++ct) {
      a.base.push_back(hb.take(positions, "input.c" + std::to_string(ct)));
      cur_regions.emplace_back(a.base.back(), positions);
    }
    for (std::size_t ct = tiles; ct-- > 0;) {
      hb.gather(LdrSource::input, ct * kLanes, channels, a.base[ct], 0, std::min(kLanes, channels - ct * kLanes),
                positions);
    }
    return a;
  };

  std::optional<FinOp> fin;
  // Destination of a layer producing (positions, channels): a fresh activation or the output buffer.
  auto destination = [&](std::size_t li, bool last, std::size_t positions, std::size_t channels, Act& out) {
    Final f;
    const std::size_t tiles = ceil_div(channels, kLanes);
    if (last) {
      if (positions > 1 && tiles > 1) {
        throw std::invalid_argument("final HPE layer must have one position or at most 32 channels");
      }
      if (positions * tiles > cfg.out_words) {
        throw CapacityError("output buffer", "output buffer: " + std::to_string(positions * tiles) +
                                                 " words exceed " + std::to_string(cfg.out_words));
      }
      if (positions > 255) throw CapacityError("output buffer", "output buffer: more than 255 output rows");
      f.kind = HpeDest::out;
      for (std::size_t j = 0; j < tiles; ++j) f.dst.push_back(j);
      fin = FinOp{static_cast<std::uint16_t>(positions), static_cast<std::uint16_t>(channels)};
      hb.layout.push_back({"output", "out", 0, positions * tiles});
      return f;
    }
    out.positions = positions;
    out.channels = channels;
    for (std::size_t j = 0; j < tiles; ++j) {
      out.base.push_back(hb.take(positions, tag(li) + ".out.c" + std::to_string(j)));
      f.dst.push_back(out.base.back());
    }
    return f;
  };

  auto release = [&](std::vector<std::pair<std::size_t, std::size_t>>& regions) {
    for (auto [off, n] : regions) hb.give(off, n);
    regions.clear();
  };

  std::size_t li = 0;
  while (li < nl) {
    const Layer& layer = spec.layers[li];
    const LayerWeights& w = weights.layers[li];
    const Shape in = shapes[li];
    const std::size_t tile_before = hb.tile_count();
    std::vector<std::pair<std::size_t, std::size_t>> scratch;
    std::vector<std::pair<std::size_t, std::size_t>> next_regions;
    std::size_t consumed = 1;
    Act next;

    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      if (!cur) cur = materialize(1, in.size());
      const bool last = li + 1 == nl;
      Final f = destination(li, last, 1, d->out, next);
      f.table = tables.slot(d->act);
      auto xs = flat_tiles(*cur, 0, in.size(), 0);
      if (d->bias) xs.push_back(bias_tile(1));
      for (std::size_t j = 0; j * kLanes < d->out; ++j) hb.chain(with_weights(xs, w, j), 1, j, f);
    } else if (const auto* c = std::get_if<Conv1DLayer>(&layer)) {
      std::size_t out_pos = shapes[li + 1].positions;
      Final f;
      std::uint8_t window = 1, stride = 1;
      if (li + 1 < nl) {
        if (const auto* p = std::get_if<MaxPool1DLayer>(&spec.layers[li + 1]); p && p->window <= 4 && p->stride <= 4) {
          window = static_cast<std::uint8_t>(p->window);
          stride = static_cast<std::uint8_t>(p->stride);
          consumed = 2;
        }
      }
      const std::size_t rows = out_pos;
      const std::size_t final_pos = shapes[li + consumed].positions;
      const bool last = li + consumed == nl;
      f = destination(li, last, final_pos, c->out_ch, next);
      f.op = consumed == 2 ? Opcode::ACCP : Opcode::ACCA;
      f.window = window;
      f.stride = stride;
      f.table = tables.slot(c->act);

      const std::size_t cin = c->in_ch;
      const std::size_t cp = cin <= kLanes ? std::bit_ceil(cin) : ceil_div(cin, kLanes) * kLanes;
      const std::size_t ktiles = ceil_div(c->kernel * cp, kLanes);
      const std::size_t direct_tiles = c->kernel * ceil_div(cin, kLanes);
      std::vector<XTile> xs;
      if (cur && c->stride == 1 && direct_tiles <= ktiles) {
        for (std::size_t k = 0; k < c->kernel; ++k) {
          for (std::size_t ct = 0; ct * kLanes < cin; ++ct) {
            XTile x(cur->base[ct] + k, rows);
            for (std::size_t i = 0; i < kLanes && ct * kLanes + i < cin; ++i) {
              x.wrow[i] = static_cast<std::int32_t>(k * cin + ct * kLanes + i);
            }
            xs.push_back(x);
          }
        }
      } else {
        // im2col: K-tile t holds padded row indices [32t, 32t + 32), index k*cp + ch.
        const std::size_t xbase = hb.take(ktiles * rows, tag(li) + ".im2col");
        scratch.emplace_back(xbase, ktiles * rows);
        for (std::size_t t = 0; t < ktiles; ++t) {
          XTile x(xbase + t * rows, rows);
          for (std::size_t i = 0; i < kLanes; ++i) {
            const std::size_t kk = (t * kLanes + i) / cp;
            const std::size_t ch = (t * kLanes + i) % cp;
            if (kk < c->kernel && ch < cin) x.wrow[i] = static_cast<std::int32_t>(kk * cin + ch);
          }
          xs.push_back(x);
        }
        struct G {
          LdrSource src;
          std::size_t base, stride, tile, lane, width, src_ct;
        };
        std::vector<G> gs;
        const std::size_t last_ct = ceil_div(cin, kLanes) - 1;
        if (!cur && cp == cin) {
          for (std::size_t t = 0; t < ktiles; ++t) {
            gs.push_back({LdrSource::input, t * kLanes, c->stride * cin, t, 0,
                          std::min(kLanes, c->kernel * cin - t * kLanes), last_ct});
          }
        } else {
          for (std::size_t k = 0; k < c->kernel; ++k) {
            for (std::size_t ct = 0; ct * kLanes < cin; ++ct) {
              const std::size_t kp = k * cp + ct * kLanes;
              const std::size_t width = std::min(kLanes, cin - ct * kLanes);
              if (cur) {
                gs.push_back({LdrSource::bank1, cur->base[ct] + k, c->stride, kp / kLanes, kp % kLanes, width, ct});
              } else {
                gs.push_back({LdrSource::input, k * cin + ct * kLanes, c->stride * cin, kp / kLanes, kp % kLanes,
                              width, ct});
              }
            }
          }
        }
        // The first gather waits on the previous layer's last merge; tile 0 (read first) is filled last.
        std::stable_sort(gs.begin(), gs.end(), [&](const G& a, const G& b) {
          auto key = [&](const G& g) { return g.tile == 0 ? 2 : g.src_ct == last_ct ? 0 : 1; };
          return key(a) < key(b);
        });
        for (const auto& g : gs) hb.gather(g.src, g.base, g.stride, xbase + g.tile * rows, g.lane, g.width, rows);
      }
      if (c->bias) xs.push_back(bias_tile(rows));
      for (std::size_t j = 0; j * kLanes < c->out_ch; ++j) hb.chain(with_weights(xs, w, j), rows, j, f);
    } else if (const auto* p = std::get_if<MaxPool1DLayer>(&layer)) {
      if (p->window > 4 || p->stride > 4) {
        throw std::invalid_argument("HPE max pooling supports window and stride up to 4");
      }
      if (!cur) cur = materialize(in.positions, in.channels);
      const bool last = li + 1 == nl;
      Final f = destination(li, last, shapes[li + 1].positions, in.channels, next);
      f.op = Opcode::ACCP;
      f.window = static_cast<std::uint8_t>(p->window);
      f.stride = static_cast<std::uint8_t>(p->stride);
      f.table = tables.slot(ActKind::identity);
      for (std::size_t ct = 0; ct * kLanes < in.channels; ++ct) {
        XTile x(cur->base[ct], in.positions);
        const std::size_t width = std::min(kLanes, in.channels - ct * kLanes);
        for (std::size_t i = 0; i < width; ++i) x.wrow[i] = static_cast<std::int32_t>(i);
        hb.chain({KTile{x, identity_tile(width)}}, in.positions, ct, f);
      }
    } else {
      const auto& r = std::get<RnnLayer>(layer);
      if (!cur) cur = materialize(r.timesteps, r.in);
      const bool last = li + 1 == nl;
      Final f_out = destination(li, last, 1, r.hidden, next);
      const std::uint8_t table = tables.slot(r.act);
      f_out.table = table;
      const std::size_t htiles = ceil_div(r.hidden, kLanes);
      std::array<Act, 2> h;
      for (std::size_t s = 0; s < 2 && r.timesteps > 1; ++s) {
        h[s].positions = 1;
        h[s].channels = r.hidden;
        for (std::size_t j = 0; j < htiles; ++j) {
          h[s].base.push_back(hb.take(1, tag(li) + ".h" + std::to_string(s) + ".c" + std::to_string(j)));
          scratch.emplace_back(h[s].base.back(), 1);
        }
      }
      for (std::size_t t = 0; t < r.timesteps; ++t) {
        auto xs = flat_tiles(*cur, t * r.in, r.in, 0);
        if (t > 0) {
          auto hs = flat_tiles(h[(t - 1) % 2], 0, r.hidden, r.in);
          xs.insert(xs.end(), hs.begin(), hs.end());
        }
        if (r.bias) xs.push_back(bias_tile(1));
        Final f = f_out;
        if (t + 1 < r.timesteps) {
          f = Final{};
          f.table = table;
          f.dst = h[t % 2].base;
        }
        for (std::size_t j = 0; j < htiles; ++j) hb.chain(with_weights(xs, w, j), 1, j, f);
      }
    }

    const std::size_t tiles_used = hb.tile_count() - tile_before;
    cp.layout.push_back({tag(li) + ".params", "pCache", tile_before * kHpeTileBytes, tiles_used * kHpeTileBytes});
    release(scratch);
    release(cur_regions);
    for (std::size_t j = 0; j < next.base.size(); ++j) cur_regions.emplace_back(next.base[j], next.positions);
    cur = next;
    li += consumed;
  }
  hb.finish(static_cast<std::uint16_t>(spec.input_len), *fin);

  const std::size_t region = cfg.bank_words / 4;
  for (std::size_t b = 2; b <= 3; ++b) {
    const std::string space = "bank" + std::to_string(b);
    cp.layout.push_back({"partials.even", space, 0, 2 * region});
    cp.layout.push_back({"partials.odd", space, 2 * region, 2 * region});
  }
  cp.layout.insert(cp.layout.end(), hb.layout.begin(), hb.layout.end());

  if (img.param_image.size() > cfg.pcache_bytes) {
    throw CapacityError("pCache", "pCache: " + std::to_string(hb.tile_count()) + " weight tiles (" +
                                      std::to_string(img.param_image.size()) + " bytes) exceed " +
                                      std::to_string(cfg.pcache_bytes));
  }
  if (img.code_bytes() > cfg.icache_bytes) {
    throw CapacityError("iCache", "iCache: " + std::to_string(img.bundles.size()) + " bundles (" +
                                      std::to_string(img.code_bytes()) + " bytes) exceed " +
                                      std::to_string(cfg.icache_bytes));
  }
  require_valid(img, cfg.limits());
  cp.predicted_cycles = predict_cycles(img, cfg);
  return cp;
}

}  // namespace

CompiledProgram compile(const ModelSpec& spec, const WeightsFile& weights, const CompileOptions& opts) {
  spec.check();
  weights.check_against(spec);
  return spec.target == Target::fpe ? compile_fpe(spec, weights, opts.fpe) : compile_hpe(spec, weights, opts.hpe);
}

DenseFpeLowering lower_dense_fpe(const DenseLayer& layer, const LayerWeights& weights, const BlockPlan& plan,
                                 std::uint8_t table) {
  if (layer.in == 0 || layer.out == 0) throw DimensionError("dense layer with a zero dimension");
  if (plan != plan_blocks(layer.in, layer.out, kFpeBlockRows, kFpeBlockCols)) {
    throw std::invalid_argument("FPE dense lowering needs the (32, 8) block plan of the layer");
  }
  if (weights.weights.rows != layer.in || weights.weights.cols != layer.out || weights.bias.size() != layer.out) {
    throw DimensionError("weights do not match the dense layer");
  }
  ProgramImage img;
  img.bundles.push_back(Bundle{});
  FpeSchedule sched(img, kLanes, 0);
  sched.set_one(plan.x, 0, false);
  sched.layer(layer, weights, 0, FpeDst{FpeDest::out, 0}, table);
  DenseFpeLowering out;
  out.preload = std::get<LdpOp>(img.bundles[0].param);
  out.bundles.assign(img.bundles.begin() + 1, img.bundles.end());
  out.params = std::move(img.param_image);
  return out;
}

std::uint64_t predict_cycles(const ProgramImage& img, const FpeConfig& cfg) {
  return img.bundles.size() + cfg.pipeline_depth;
}

std::uint64_t predict_cycles(const ProgramImage& img, const HpeConfig& cfg) {
  struct Range {
    int bank;
    std::size_t lo, hi;
    bool write;
  };
  struct Busy {
    int unit;
    std::uint64_t until;
    std::vector<Range> ranges;
  };
  std::vector<Busy> active;
  std::uint64_t next = 0;
  for (const Bundle& b : img.bundles) {
    if (std::holds_alternative<FinOp>(b.compute)) {
      std::uint64_t t = next;
      for (const auto& a : active) t = std::max(t, a.until);
      return t + cfg.drain_cycles;
    }
    std::vector<std::pair<Busy, std::uint64_t>> ops;  // op, duration
    if (const auto* m = std::get_if<MmOp>(&b.compute)) {
      ops.push_back({{0, 0, {{1, m->src, std::size_t{m->src} + m->rows, false},
                             {m->dst_bank, m->dst, std::size_t{m->dst} + m->rows, true}}},
                     cfg.mm_cycles(m->rows)});
    } else if (const auto* c = std::get_if<AccOp>(&b.compute)) {
      Busy a{1, 0, {}};
      if (c->operands != AccOperands::bank3) a.ranges.push_back({2, c->offset, std::size_t{c->offset} + c->len, false});
      if (c->operands != AccOperands::bank2) a.ranges.push_back({3, c->offset, std::size_t{c->offset} + c->len, false});
      const std::size_t written = c->op == Opcode::ACCP ? (c->len - c->pool_window) / c->pool_stride + 1 : c->len;
      const int bank = c->dst_kind == HpeDest::out ? 0 : static_cast<int>(c->dst_kind) + 1;
      a.ranges.push_back({bank, c->dst, c->dst + written, true});
      ops.push_back({a, c->len});
    }
    if (std::holds_alternative<LdpOp>(b.param)) ops.push_back({{2, 0, {}}, cfg.weight_preload_cycles});
    if (const auto* g = std::get_if<GatherOp>(&b.data)) {
      Busy a{3, 0, {{1, g->dst, std::size_t{g->dst} + g->rows, true}}};
      if (g->src == LdrSource::bank1) {
        a.ranges.push_back({1, g->src_base, g->src_base + std::size_t{g->rows - 1u} * g->src_stride + 1, false});
      }
      ops.push_back({a, g->rows});
    }
    std::uint64_t t = next;
    for (const auto& [op, dur] : ops) {
      for (const auto& a : active) {
        bool blocked = a.unit == op.unit || (op.unit == 0 && a.unit == 2);
        for (const auto& x : a.ranges) {
          for (const auto& y : op.ranges) {
            blocked = blocked || (x.bank == y.bank && (x.write || y.write) && x.lo < y.hi && y.lo < x.hi);
          }
        }
        if (blocked) t = std::max(t, a.until);
      }
    }
    std::erase_if(active, [&](const Busy& a) { return a.until <= t; });
    for (auto& [op, dur] : ops) {
      op.until = t + dur;
      active.push_back(op);
    }
    next = t + 1;
  }
  throw std::invalid_argument("program has no FIN");
}

}  // namespace kscope
