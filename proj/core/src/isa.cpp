#include "kscope/isa.hpp"

#include <sstream>
#include <stdexcept>

#include "kscope/errors.hpp"

namespace kscope {

namespace {

class BitWriter {
 public:
  explicit BitWriter(std::size_t bytes) : buf_(bytes, 0) {}

  void put(std::uint64_t value, std::size_t pos, std::size_t width, const char* name) {
    if (width < 64 && (value >> width) != 0) {
      throw FormatError(std::string("field '") + name + "' value " + std::to_string(value) + " does not fit " +
                        std::to_string(width) + " bits");
    }
    for (std::size_t i = 0; i < width; ++i) {
      if ((value >> i) & 1U) buf_[(pos + i) / 8] |= static_cast<std::uint8_t>(1U << ((pos + i) % 8));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> buf) : buf_(buf) {}

  std::uint64_t get(std::size_t pos, std::size_t width) const {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      if ((buf_[(pos + i) / 8] >> ((pos + i) % 8)) & 1U) v |= std::uint64_t{1} << i;
    }
    return v;
  }
  // Bits [from, to) must all be zero.
  void require_zero(std::size_t from, std::size_t to, const char* what) const {
    if (get(from, to - from) != 0) throw FormatError(std::string("corrupt encoding: nonzero reserved bits in ") + what);
  }

 private:
  std::span<const std::uint8_t> buf_;
};

[[noreturn]] void corrupt(const std::string& msg) { throw FormatError("corrupt encoding: " + msg); }

// ---- FPE layout (64 bits) ----
// compute [0,23)  param [23,47)  data [47,62)  reserved [62,64)
constexpr std::size_t kFpeParam = 23;
constexpr std::size_t kFpeData = 47;
constexpr std::size_t kFpeEnd = 62;

// ---- HPE layout (96 bits) ----
// compute [0,41)  param [41,51)  data [51,96)
constexpr std::size_t kHpeParam = 41;
constexpr std::size_t kHpeData = 51;

void encode_fpe(BitWriter& w, const Bundle& b) {
  const ComputeOp& c = b.compute;
  w.put(static_cast<std::uint64_t>(opcode_of(c)), 0, 4, "opcode");
  if (const auto* s = std::get_if<StartOp>(&c)) {
    w.put(s->in_len, 4, 8, "in_len");
  } else if (const auto* f = std::get_if<FinOp>(&c)) {
    w.put(f->rows, 4, 7, "rows");
    w.put(f->cols, 11, 12, "cols");
  } else if (const auto* m = std::get_if<MvOp>(&c)) {
    if (m->op != Opcode::MV && m->op != Opcode::MVA && m->op != Opcode::MVAA) throw FormatError("MvOp with non-MV opcode");
    if (m->op != Opcode::MVAA && (m->table != 0 || m->dst_kind != FpeDest::regfile || m->dst != 0 || m->dst_lane != 0 ||
                                  !m->multiply)) {
      throw FormatError("MV/MVA cannot carry activation or destination fields");
    }
    if (!m->multiply && (m->src != 0 || m->pbuf != 0)) throw FormatError("activate-only MVAA cannot name operands");
    if (m->dst_lane % 8 != 0) throw FormatError("MVAA destination lane must be a multiple of 8");
    w.put(m->src, 4, 5, "src");
    w.put(m->pbuf, 9, 1, "pbuf");
    w.put(m->acc, 10, 2, "acc");
    w.put(m->table, 12, 2, "table");
    w.put(m->dst_kind == FpeDest::out ? 1 : 0, 14, 1, "dst kind");
    w.put(m->dst, 15, 5, "dst");
    w.put(m->dst_lane / 8U, 20, 2, "dst lane");
    w.put(m->multiply ? 0 : 1, 22, 1, "no-multiply");
  } else if (!std::holds_alternative<NopOp>(c)) {
    throw FormatError("HPE compute op in FPE bundle");
  }

  if (const auto* p = std::get_if<LdpOp>(&b.param)) {
    if (p->len == 0 || p->len % 8 != 0 || p->len > kFpeBlockBytes) {
      throw FormatError("FPE LDP length must be a multiple of 8 in [8, 256]");
    }
    w.put(1, kFpeParam, 1, "ldp");
    w.put(p->pbuf, kFpeParam + 1, 1, "pbuf");
    w.put(p->addr, kFpeParam + 2, 16, "addr");
    w.put(p->len / 8U - 1U, kFpeParam + 18, 5, "len");
  }

  if (const auto* l = std::get_if<LdrOp>(&b.data)) {
    unsigned kind = 0;
    switch (l->src) {
      case LdrSource::input: kind = 0; break;
      case LdrSource::one: kind = 1; break;
      case LdrSource::zero: kind = 2; break;
      case LdrSource::bank1: throw FormatError("FPE LDR cannot read bank 1");
    }
    if (l->src != LdrSource::input && l->src_word != 0) throw FormatError("constant LDR cannot name a source word");
    if (l->len == 0) throw FormatError("LDR length must be >= 1");
    w.put(1, kFpeData, 2, "data op");
    w.put(l->dst, kFpeData + 2, 5, "dst");
    w.put(kind, kFpeData + 7, 2, "source");
    w.put(l->src_word, kFpeData + 9, 3, "src word");
    w.put(l->len - 1U, kFpeData + 12, 3, "len");
  } else if (const auto* s = std::get_if<StrOp>(&b.data)) {
    if (s->len == 0) throw FormatError("STR length must be >= 1");
    w.put(2, kFpeData, 2, "data op");
    w.put(s->src, kFpeData + 2, 5, "src");
    w.put(s->out_word, kFpeData + 7, 5, "out word");
    w.put(s->len - 1U, kFpeData + 12, 3, "len");
  } else if (std::holds_alternative<GatherOp>(b.data)) {
    throw FormatError("HPE gather LDR in FPE bundle");
  }
}

Bundle decode_fpe(const BitReader& r) {
  Bundle b;
  const auto op = r.get(0, 4);
  switch (op) {
    case static_cast<unsigned>(Opcode::NOP):
      r.require_zero(4, kFpeParam, "NOP");
      break;
    case static_cast<unsigned>(Opcode::START):
      b.compute = StartOp{static_cast<std::uint16_t>(r.get(4, 8))};
      r.require_zero(12, kFpeParam, "START");
      break;
    case static_cast<unsigned>(Opcode::FIN):
      b.compute = FinOp{static_cast<std::uint16_t>(r.get(4, 7)), static_cast<std::uint16_t>(r.get(11, 12))};
      break;
    case static_cast<unsigned>(Opcode::MV):
    case static_cast<unsigned>(Opcode::MVA):
    case static_cast<unsigned>(Opcode::MVAA): {
      MvOp m;
      m.op = static_cast<Opcode>(op);
      m.src = static_cast<std::uint8_t>(r.get(4, 5));
      m.pbuf = static_cast<std::uint8_t>(r.get(9, 1));
      m.acc = static_cast<std::uint8_t>(r.get(10, 2));
      m.table = static_cast<std::uint8_t>(r.get(12, 2));
      m.dst_kind = r.get(14, 1) ? FpeDest::out : FpeDest::regfile;
      m.dst = static_cast<std::uint8_t>(r.get(15, 5));
      m.dst_lane = static_cast<std::uint8_t>(r.get(20, 2) * 8);
      m.multiply = r.get(22, 1) == 0;
      if (m.op != Opcode::MVAA) r.require_zero(12, kFpeParam, "MV/MVA");
      if (!m.multiply && (m.src != 0 || m.pbuf != 0)) corrupt("activate-only MVAA names operands");
      b.compute = m;
      break;
    }
    default:
      corrupt("opcode " + std::to_string(op) + " is not an FPE compute op");
  }

  if (r.get(kFpeParam, 1)) {
    LdpOp p;
    p.pbuf = static_cast<std::uint8_t>(r.get(kFpeParam + 1, 1));
    p.addr = static_cast<std::uint32_t>(r.get(kFpeParam + 2, 16));
    p.len = static_cast<std::uint16_t>((r.get(kFpeParam + 18, 5) + 1) * 8);
    b.param = p;
  } else {
    r.require_zero(kFpeParam + 1, kFpeData, "param NOP");
  }
  r.require_zero(kFpeData - 1, kFpeData, "param");

  const auto dop = r.get(kFpeData, 2);
  if (dop == 0) {
    r.require_zero(kFpeData + 2, kFpeEnd, "data NOP");
  } else if (dop == 1) {
    LdrOp l;
    l.dst = static_cast<std::uint8_t>(r.get(kFpeData + 2, 5));
    const auto kind = r.get(kFpeData + 7, 2);
    if (kind > 2) corrupt("LDR source kind");
    l.src = kind == 0 ? LdrSource::input : (kind == 1 ? LdrSource::one : LdrSource::zero);
    l.src_word = static_cast<std::uint8_t>(r.get(kFpeData + 9, 3));
    if (l.src != LdrSource::input && l.src_word != 0) corrupt("constant LDR names a source word");
    l.len = static_cast<std::uint8_t>(r.get(kFpeData + 12, 3) + 1);
    b.data = l;
  } else if (dop == 2) {
    StrOp s;
    s.src = static_cast<std::uint8_t>(r.get(kFpeData + 2, 5));
    s.out_word = static_cast<std::uint8_t>(r.get(kFpeData + 7, 5));
    s.len = static_cast<std::uint8_t>(r.get(kFpeData + 12, 3) + 1);
    b.data = s;
  } else {
    corrupt("data opcode 3");
  }
  r.require_zero(kFpeEnd, 64, "bundle tail");
  return b;
}

void encode_hpe(BitWriter& w, const Bundle& b) {
  const ComputeOp& c = b.compute;
  w.put(static_cast<std::uint64_t>(opcode_of(c)), 0, 4, "opcode");
  if (const auto* s = std::get_if<StartOp>(&c)) {
    w.put(s->in_len, 4, 8, "in_len");
  } else if (const auto* f = std::get_if<FinOp>(&c)) {
    w.put(f->rows, 4, 8, "rows");
    w.put(f->cols, 12, 12, "cols");
  } else if (const auto* m = std::get_if<MmOp>(&c)) {
    if (m->rows == 0) throw FormatError("MM rows must be >= 1");
    if (m->dst_bank != 2 && m->dst_bank != 3) throw FormatError("MM destination must be bank 2 or 3");
    w.put(m->src, 4, 10, "src");
    w.put(m->rows - 1U, 14, 8, "rows");
    w.put(m->dst_bank == 3 ? 1 : 0, 22, 1, "dst bank");
    w.put(m->dst, 23, 10, "dst");
  } else if (const auto* a = std::get_if<AccOp>(&c)) {
    unsigned sel = 0;
    if (a->op == Opcode::ACC) {
      if (a->dst_kind != HpeDest::bank2 && a->dst_kind != HpeDest::bank3) {
        throw FormatError("ACC writes bank 2 or 3");
      }
      sel = a->dst_kind == HpeDest::bank3 ? 1 : 0;
      if (a->table != 0) throw FormatError("ACC cannot carry an activation table");
    } else if (a->op == Opcode::ACCA || a->op == Opcode::ACCP) {
      if (a->dst_kind != HpeDest::bank1 && a->dst_kind != HpeDest::out) {
        throw FormatError("ACCA/ACCP write bank 1 or the output buffer");
      }
      sel = a->dst_kind == HpeDest::out ? 1 : 0;
    } else {
      throw FormatError("AccOp with non-ACC opcode");
    }
    if (a->op != Opcode::ACCP && (a->pool_window != 1 || a->pool_stride != 1)) {
      throw FormatError("only ACCP carries a pool window");
    }
    if (a->len == 0 || a->pool_window == 0 || a->pool_stride == 0) throw FormatError("zero ACC length or pool size");
    w.put(a->offset, 4, 10, "offset");
    w.put(static_cast<unsigned>(a->operands), 14, 2, "operands");
    w.put(sel, 16, 1, "dst select");
    w.put(a->dst, 17, 10, "dst");
    w.put(a->len - 1U, 27, 8, "len");
    w.put(a->table, 35, 2, "table");
    w.put(a->pool_window - 1U, 37, 2, "pool window");
    w.put(a->pool_stride - 1U, 39, 2, "pool stride");
  } else if (!std::holds_alternative<NopOp>(c)) {
    throw FormatError("FPE compute op in HPE bundle");
  }

  if (const auto* p = std::get_if<LdpOp>(&b.param)) {
    if (p->pbuf != 0 || p->len != 0) throw FormatError("HPE LDP names a whole tile only");
    w.put(1, kHpeParam, 1, "ldp");
    w.put(p->addr, kHpeParam + 1, 9, "tile");
  }

  if (const auto* g = std::get_if<GatherOp>(&b.data)) {
    unsigned kind = 0;
    switch (g->src) {
      case LdrSource::input: kind = 0; break;
      case LdrSource::bank1: kind = 1; break;
      case LdrSource::one: kind = 2; break;
      case LdrSource::zero: kind = 3; break;
    }
    if (g->width == 0 || g->rows == 0) throw FormatError("LDR width and rows must be >= 1");
    if ((g->src == LdrSource::one || g->src == LdrSource::zero) && (g->src_base != 0 || g->src_stride != 0)) {
      throw FormatError("constant LDR cannot name a source");
    }
    w.put(1, kHpeData, 1, "ldr");
    w.put(kind, kHpeData + 1, 2, "source");
    w.put(g->src_base, kHpeData + 3, 10, "src base");
    w.put(g->src_stride, kHpeData + 13, 6, "src stride");
    w.put(g->dst, kHpeData + 19, 10, "dst");
    w.put(g->dst_lane, kHpeData + 29, 5, "dst lane");
    w.put(g->width - 1U, kHpeData + 34, 5, "width");
    w.put(g->rows - 1U, kHpeData + 39, 6, "rows");
  } else if (!std::holds_alternative<NopOp>(b.data)) {
    throw FormatError("FPE LDR/STR in HPE bundle");
  }
}

Bundle decode_hpe(const BitReader& r) {
  Bundle b;
  const auto op = r.get(0, 4);
  switch (op) {
    case static_cast<unsigned>(Opcode::NOP):
      r.require_zero(4, kHpeParam, "NOP");
      break;
    case static_cast<unsigned>(Opcode::START):
      b.compute = StartOp{static_cast<std::uint16_t>(r.get(4, 8))};
      r.require_zero(12, kHpeParam, "START");
      break;
    case static_cast<unsigned>(Opcode::FIN):
      b.compute = FinOp{static_cast<std::uint16_t>(r.get(4, 8)), static_cast<std::uint16_t>(r.get(12, 12))};
      r.require_zero(24, kHpeParam, "FIN");
      break;
    case static_cast<unsigned>(Opcode::MM): {
      MmOp m;
      m.src = static_cast<std::uint16_t>(r.get(4, 10));
      m.rows = static_cast<std::uint16_t>(r.get(14, 8) + 1);
      m.dst_bank = r.get(22, 1) ? 3 : 2;
      m.dst = static_cast<std::uint16_t>(r.get(23, 10));
      r.require_zero(33, kHpeParam, "MM");
      b.compute = m;
      break;
    }
    case static_cast<unsigned>(Opcode::ACC):
    case static_cast<unsigned>(Opcode::ACCA):
    case static_cast<unsigned>(Opcode::ACCP): {
      AccOp a;
      a.op = static_cast<Opcode>(op);
      a.offset = static_cast<std::uint16_t>(r.get(4, 10));
      const auto operands = r.get(14, 2);
      if (operands > 2) corrupt("ACC operand selector");
      a.operands = static_cast<AccOperands>(operands);
      const bool sel = r.get(16, 1) != 0;
      if (a.op == Opcode::ACC) {
        a.dst_kind = sel ? HpeDest::bank3 : HpeDest::bank2;
      } else {
        a.dst_kind = sel ? HpeDest::out : HpeDest::bank1;
      }
      a.dst = static_cast<std::uint16_t>(r.get(17, 10));
      a.len = static_cast<std::uint16_t>(r.get(27, 8) + 1);
      a.table = static_cast<std::uint8_t>(r.get(35, 2));
      a.pool_window = static_cast<std::uint8_t>(r.get(37, 2) + 1);
      a.pool_stride = static_cast<std::uint8_t>(r.get(39, 2) + 1);
      if (a.op == Opcode::ACC && a.table != 0) corrupt("ACC with activation table");
      if (a.op != Opcode::ACCP && (a.pool_window != 1 || a.pool_stride != 1)) corrupt("pool fields outside ACCP");
      b.compute = a;
      break;
    }
    default:
      corrupt("opcode " + std::to_string(op) + " is not an HPE compute op");
  }

  if (r.get(kHpeParam, 1)) {
    b.param = LdpOp{0, static_cast<std::uint32_t>(r.get(kHpeParam + 1, 9)), 0};
  } else {
    r.require_zero(kHpeParam + 1, kHpeData, "param NOP");
  }

  if (r.get(kHpeData, 1)) {
    GatherOp g;
    switch (r.get(kHpeData + 1, 2)) {
      case 0: g.src = LdrSource::input; break;
      case 1: g.src = LdrSource::bank1; break;
      case 2: g.src = LdrSource::one; break;
      default: g.src = LdrSource::zero; break;
    }
    g.src_base = static_cast<std::uint16_t>(r.get(kHpeData + 3, 10));
    g.src_stride = static_cast<std::uint8_t>(r.get(kHpeData + 13, 6));
    g.dst = static_cast<std::uint16_t>(r.get(kHpeData + 19, 10));
    g.dst_lane = static_cast<std::uint8_t>(r.get(kHpeData + 29, 5));
    g.width = static_cast<std::uint8_t>(r.get(kHpeData + 34, 5) + 1);
    g.rows = static_cast<std::uint8_t>(r.get(kHpeData + 39, 6) + 1);
    if ((g.src == LdrSource::one || g.src == LdrSource::zero) && (g.src_base != 0 || g.src_stride != 0)) {
      corrupt("constant LDR names a source");
    }
    b.data = g;
  } else {
    r.require_zero(kHpeData + 1, 96, "data NOP");
  }
  return b;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteCursor {
 public:
  explicit ByteCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated program: ") + what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(Target t) { return t == Target::fpe ? "fpe" : "hpe"; }

Target parse_target(std::string_view s) {
  if (s == "fpe" || s == "FPE") return Target::fpe;
  if (s == "hpe" || s == "HPE") return Target::hpe;
  throw std::invalid_argument("unknown target '" + std::string(s) + "' (expected fpe or hpe)");
}

std::string_view mnemonic(Opcode op) {
  switch (op) {
    case Opcode::NOP: return "NOP";
    case Opcode::START: return "START";
    case Opcode::FIN: return "FIN";
    case Opcode::MV: return "MV";
    case Opcode::MVA: return "MVA";
    case Opcode::MVAA: return "MVAA";
    case Opcode::MM: return "MM";
    case Opcode::ACC: return "ACC";
    case Opcode::ACCA: return "ACCA";
    case Opcode::ACCP: return "ACCP";
    case Opcode::LDP: return "LDP";
    case Opcode::LDR: return "LDR";
    case Opcode::STR: return "STR";
  }
  return "?";
}

Opcode opcode_of(const ComputeOp& op) {
  return std::visit(
      [](const auto& o) -> Opcode {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, NopOp>) return Opcode::NOP;
        else if constexpr (std::is_same_v<T, StartOp>) return Opcode::START;
        else if constexpr (std::is_same_v<T, FinOp>) return Opcode::FIN;
        else if constexpr (std::is_same_v<T, MmOp>) return Opcode::MM;
        else return o.op;
      },
      op);
}

Opcode opcode_of(const ParamOp& op) { return std::holds_alternative<LdpOp>(op) ? Opcode::LDP : Opcode::NOP; }

Opcode opcode_of(const DataOp& op) {
  if (std::holds_alternative<StrOp>(op)) return Opcode::STR;
  if (std::holds_alternative<NopOp>(op)) return Opcode::NOP;
  return Opcode::LDR;
}

std::array<ActTable, kNumActTables> ProgramImage::default_tables() {
  const ActTable id = build_act_table(ActKind::identity);
  return {id, id, id, id};
}

std::optional<StartOp> ProgramImage::start() const {
  if (!bundles.empty()) {
    if (const auto* s = std::get_if<StartOp>(&bundles.front().compute)) return *s;
  }
  return std::nullopt;
}

std::optional<FinOp> ProgramImage::fin() const {
  if (!bundles.empty()) {
    if (const auto* f = std::get_if<FinOp>(&bundles.back().compute)) return *f;
  }
  return std::nullopt;
}

TargetLimits default_limits(Target t) {
  TargetLimits l;
  l.target = t;
  if (t == Target::fpe) {
    l.icache_bytes = 1024;
    l.pcache_bytes = 8192;
    l.regfile_words = 32;
    l.acc_groups = 4;
    l.out_words = 4;
  } else {
    l.icache_bytes = 8192;
    l.pcache_bytes = 524288;
    l.bank_words = 1024;
    l.out_words = 256;
  }
  return l;
}

std::string_view to_string(DiagKind k) {
  switch (k) {
    case DiagKind::capacity: return "capacity";
    case DiagKind::placement: return "placement";
    case DiagKind::slot: return "slot";
    case DiagKind::bounds: return "bounds";
  }
  return "?";
}

std::vector<Diagnostic> validate(const ProgramImage& img, const TargetLimits& limits) {
  std::vector<Diagnostic> out;
  auto diag = [&](std::size_t i, DiagKind k, std::string msg) { out.push_back({i, k, std::move(msg)}); };

  if (img.target != limits.target) {
    diag(Diagnostic::kImage, DiagKind::slot,
         "program targets " + std::string(to_string(img.target)) + " but limits are for " +
             std::string(to_string(limits.target)));
    return out;
  }
  if (img.code_bytes() > limits.icache_bytes) {
    diag(Diagnostic::kImage, DiagKind::capacity,
         "iCache: " + std::to_string(img.code_bytes()) + " code bytes exceed " + std::to_string(limits.icache_bytes));
  }
  if (img.param_image.size() > limits.pcache_bytes) {
    diag(Diagnostic::kImage, DiagKind::capacity,
         "pCache: " + std::to_string(img.param_image.size()) + " parameter bytes exceed " +
             std::to_string(limits.pcache_bytes));
  }
  if (img.bundles.empty() || !std::holds_alternative<FinOp>(img.bundles.back().compute)) {
    diag(Diagnostic::kImage, DiagKind::placement, "program does not end with FIN");
  }

  const bool fpe = img.target == Target::fpe;
  const std::size_t out_lanes = limits.out_words * kLanes;
  bool seen_fin = false;
  for (std::size_t i = 0; i < img.bundles.size(); ++i) {
    const Bundle& b = img.bundles[i];
    if (seen_fin) {
      diag(i, DiagKind::placement, "instruction after FIN");
      break;
    }
    auto bounds = [&](bool ok, const std::string& msg) {
      if (!ok) diag(i, DiagKind::bounds, msg);
    };

    // compute slot
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, StartOp>) {
            if (i != 0) diag(i, DiagKind::placement, "START must be the first bundle");
            bounds(c.in_len <= limits.max_input_bytes, "START input length exceeds input buffer");
          } else if constexpr (std::is_same_v<T, FinOp>) {
            seen_fin = true;
            if (fpe) {
              bounds(c.rows == 1, "FPE output has exactly one row");
              bounds(c.cols <= out_lanes, "FIN output shape exceeds the output buffer");
            } else {
              const std::size_t words = static_cast<std::size_t>(c.rows) * ((c.cols + kLanes - 1) / kLanes);
              bounds(words <= limits.out_words, "FIN output shape exceeds the output buffer");
            }
          } else if constexpr (std::is_same_v<T, MvOp>) {
            if (!fpe) {
              diag(i, DiagKind::slot, std::string(mnemonic(c.op)) + " is not legal in HPE programs");
              return;
            }
            bounds(c.src < limits.regfile_words, "MV source word beyond regfile");
            bounds(c.acc < limits.acc_groups, "accumulator group out of range");
            bounds(c.dst_lane + kFpeBlockCols <= kLanes, "destination lane out of range");
            if (c.op == Opcode::MVAA) {
              if (c.dst_kind == FpeDest::regfile) bounds(c.dst < limits.regfile_words, "MVAA destination beyond regfile");
              else bounds(c.dst < limits.out_words, "MVAA destination beyond output buffer");
            }
          } else if constexpr (std::is_same_v<T, MmOp>) {
            if (fpe) {
              diag(i, DiagKind::slot, "MM is not legal in FPE programs");
              return;
            }
            bounds(static_cast<std::size_t>(c.src) + c.rows <= limits.bank_words, "MM source rows beyond bank 1");
            bounds(static_cast<std::size_t>(c.dst) + c.rows <= limits.bank_words, "MM destination rows beyond bank");
          } else if constexpr (std::is_same_v<T, AccOp>) {
            if (fpe) {
              diag(i, DiagKind::slot, std::string(mnemonic(c.op)) + " is not legal in FPE programs");
              return;
            }
            bounds(static_cast<std::size_t>(c.offset) + c.len <= limits.bank_words, "ACC operand rows beyond bank");
            std::size_t written = c.len;
            if (c.op == Opcode::ACCP) {
              bounds(c.pool_window <= c.len, "pool window larger than the merged rows");
              written = c.pool_window <= c.len ? (c.len - c.pool_window) / c.pool_stride + 1 : 0;
            }
            const std::size_t cap = c.dst_kind == HpeDest::out ? limits.out_words : limits.bank_words;
            bounds(c.dst + written <= cap, "ACC destination rows out of range");
          }
        },
        b.compute);

    // param slot
    if (const auto* p = std::get_if<LdpOp>(&b.param)) {
      if (fpe) {
        bounds(static_cast<std::size_t>(p->addr) + p->len <= limits.pcache_bytes, "LDP reads beyond pCache");
      } else {
        bounds((static_cast<std::size_t>(p->addr) + 1) * kHpeTileBytes <= limits.pcache_bytes,
               "LDP tile beyond pCache");
      }
    }

    // data slot
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, LdrOp>) {
            if (!fpe) {
              diag(i, DiagKind::slot, "regfile LDR is not legal in HPE programs");
              return;
            }
            bounds(static_cast<std::size_t>(d.dst) + d.len <= limits.regfile_words, "LDR beyond regfile depth");
            if (d.src == LdrSource::input) {
              bounds((static_cast<std::size_t>(d.src_word) + d.len) * kLanes <= limits.max_input_bytes,
                     "LDR reads beyond the input buffer");
            }
          } else if constexpr (std::is_same_v<T, StrOp>) {
            if (!fpe) {
              diag(i, DiagKind::slot, "STR is not legal in HPE programs");
              return;
            }
            bounds(static_cast<std::size_t>(d.src) + d.len <= limits.regfile_words, "STR reads beyond regfile");
            bounds(static_cast<std::size_t>(d.out_word) + d.len <= limits.out_words, "STR beyond output buffer");
          } else if constexpr (std::is_same_v<T, GatherOp>) {
            if (fpe) {
              diag(i, DiagKind::slot, "bank gather LDR is not legal in FPE programs");
              return;
            }
            bounds(static_cast<std::size_t>(d.dst) + d.rows <= limits.bank_words, "LDR beyond bank 1");
            bounds(static_cast<std::size_t>(d.dst_lane) + d.width <= kLanes, "LDR lanes beyond word width");
            const std::size_t last = d.src_base + static_cast<std::size_t>(d.rows - 1) * d.src_stride;
            if (d.src == LdrSource::input) {
              bounds(last + d.width <= limits.max_input_bytes, "LDR reads beyond the input buffer");
            } else if (d.src == LdrSource::bank1) {
              bounds(last < limits.bank_words, "LDR reads beyond bank 1");
            }
          }
        },
        b.data);
  }
  return out;
}

std::string format_diagnostics(const std::vector<Diagnostic>& diags) {
  std::ostringstream os;
  for (const auto& d : diags) {
    if (d.bundle == Diagnostic::kImage) os << "image";
    else os << "bundle " << d.bundle;
    os << ": " << to_string(d.kind) << ": " << d.message << '\n';
  }
  return os.str();
}

ValidationError::ValidationError(std::vector<Diagnostic> diags)
    : std::runtime_error("program failed validation:\n" + format_diagnostics(diags)), diags_(std::move(diags)) {}

void require_valid(const ProgramImage& img, const TargetLimits& limits) {
  auto diags = validate(img, limits);
  if (diags.empty()) return;
  for (const auto& d : diags) {
    if (d.kind == DiagKind::capacity) {
      const auto colon = d.message.find(':');
      throw CapacityError(d.message.substr(0, colon), d.message);
    }
  }
  throw ValidationError(std::move(diags));
}

std::vector<std::uint8_t> encode_bundle(const Bundle& b, Target t) {
  BitWriter w(bundle_bytes(t));
  if (t == Target::fpe) encode_fpe(w, b);
  else encode_hpe(w, b);
  return w.take();
}

Bundle decode_bundle(std::span<const std::uint8_t> word, Target t) {
  if (word.size() != bundle_bytes(t)) throw FormatError("bundle word has the wrong width");
  BitReader r(word);
  return t == Target::fpe ? decode_fpe(r) : decode_hpe(r);
}

std::vector<std::uint8_t> encode_binary(const ProgramImage& img) {
  std::vector<std::uint8_t> out{'K', 'P', 'R', 'G', kProgramFormatVersion, static_cast<std::uint8_t>(img.target)};
  put_u32(out, static_cast<std::uint32_t>(img.bundles.size()));
  for (const auto& b : img.bundles) {
    auto w = encode_bundle(b, img.target);
    out.insert(out.end(), w.begin(), w.end());
  }
  put_u32(out, static_cast<std::uint32_t>(img.param_image.size()));
  out.insert(out.end(), img.param_image.begin(), img.param_image.end());
  for (const auto& t : img.act_tables) {
    auto bytes = t.to_bytes();
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

ProgramImage decode_binary(std::span<const std::uint8_t> bytes) {
  ByteCursor cur(bytes);
  auto magic = cur.take(4, "magic");
  if (magic[0] != 'K' || magic[1] != 'P' || magic[2] != 'R' || magic[3] != 'G') throw FormatError("bad magic (not a KPRG file)");
  const auto version = cur.u8("version");
  if (version != kProgramFormatVersion) {
    throw FormatError("unsupported KPRG version " + std::to_string(version));
  }
  const auto target = cur.u8("target");
  if (target > 1) throw FormatError("unknown target id " + std::to_string(target));
  ProgramImage img;
  img.target = static_cast<Target>(target);
  const auto count = cur.u32("bundle count");
  const std::size_t width = bundle_bytes(img.target);
  if (cur.remaining() / width < count) throw FormatError("truncated program: bundles");
  img.bundles.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) img.bundles.push_back(decode_bundle(cur.take(width, "bundles"), img.target));
  const auto plen = cur.u32("param length");
  auto params = cur.take(plen, "param image");
  img.param_image.assign(params.begin(), params.end());
  for (auto& t : img.act_tables) {
    auto s = cur.take(256, "activation tables");
    t = ActTable::from_bytes(std::span<const std::uint8_t, 256>(s.data(), 256));
  }
  if (cur.remaining() != 0) throw FormatError("trailing bytes after activation tables");
  return img;
}

}  // namespace kscope
