#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>

#include "kscope/errors.hpp"
#include "kscope/isa.hpp"

namespace kscope {

namespace {

enum class Tok : std::uint8_t { ident, number, punct, arrow, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  std::uint64_t value = 0;
  std::size_t col = 0;  // 1-based
};

std::vector<Token> lex(std::string_view s, std::size_t line, std::size_t col0) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    const std::size_t col = col0 + i;
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      out.push_back({Tok::ident, std::string(s.substr(i, j - i)), 0, col});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      int base = 10;
      std::size_t j = i;
      if (c == '0' && i + 1 < s.size() && (s[i + 1] == 'x' || s[i + 1] == 'X')) {
        base = 16;
        j = i + 2;
      }
      const std::size_t start = j;
      while (j < s.size() && std::isxdigit(static_cast<unsigned char>(s[j])) &&
             (base == 16 || std::isdigit(static_cast<unsigned char>(s[j])))) {
        ++j;
      }
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(s.data() + start, s.data() + j, v, base);
      if (ec != std::errc() || p == s.data() + start) throw SyntaxError(line, col, "malformed number");
      out.push_back({Tok::number, std::string(s.substr(i, j - i)), v, col});
      i = j;
    } else if (c == '-' && i + 1 < s.size() && s[i + 1] == '>') {
      out.push_back({Tok::arrow, "->", 0, col});
      i += 2;
    } else if (c == ',' || c == '[' || c == ']' || c == '.' || c == '=' || c == '/') {
      out.push_back({Tok::punct, std::string(1, c), 0, col});
      ++i;
    } else {
      throw SyntaxError(line, col, std::string("unexpected character '") + c + "'");
    }
  }
  out.push_back({Tok::end, "", 0, col0 + s.size()});
  return out;
}

class SlotParser {
 public:
  SlotParser(std::vector<Token> toks, std::size_t line) : toks_(std::move(toks)), line_(line) {}

  const Token& peek() const { return toks_[pos_]; }
  Token next() {
    Token t = toks_[pos_];
    if (t.kind != Tok::end) ++pos_;
    return t;
  }
  [[noreturn]] void fail(const Token& t, const std::string& msg) const { throw SyntaxError(line_, t.col, msg); }

  bool accept_punct(char c) {
    if (peek().kind == Tok::punct && peek().text[0] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_punct(char c) {
    if (!accept_punct(c)) fail(peek(), std::string("expected '") + c + "'");
  }
  void expect_arrow() {
    if (peek().kind != Tok::arrow) fail(peek(), "expected '->'");
    ++pos_;
  }
  void expect_end() {
    if (peek().kind != Tok::end) fail(peek(), "unexpected '" + peek().text + "'");
  }
  std::uint64_t number(std::uint64_t max, const char* what) {
    Token t = next();
    if (t.kind != Tok::number) fail(t, std::string("expected ") + what);
    if (t.value > max) fail(t, std::string(what) + " " + std::to_string(t.value) + " out of range (max " + std::to_string(max) + ")");
    return t.value;
  }
  std::string ident() {
    Token t = next();
    if (t.kind != Tok::ident) fail(t, "expected identifier");
    return t.text;
  }
  bool peek_ident(std::string_view s) const { return peek().kind == Tok::ident && peek().text == s; }

  // Identifier of the form <prefix><digits>, e.g. r12, acc0, tile5.
  std::uint64_t indexed(std::string_view prefix, std::uint64_t max, const char* what) {
    Token t = next();
    if (t.kind != Tok::ident || t.text.size() <= prefix.size() || t.text.compare(0, prefix.size(), prefix) != 0) {
      fail(t, std::string("expected ") + what + " (" + std::string(prefix) + "N)");
    }
    std::uint64_t v = 0;
    const char* b = t.text.data() + prefix.size();
    const char* e = t.text.data() + t.text.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) fail(t, std::string("expected ") + what + " (" + std::string(prefix) + "N)");
    if (v > max) fail(t, std::string(what) + " " + std::to_string(v) + " out of range (max " + std::to_string(max) + ")");
    return v;
  }

  // name=value pairs with no leading comma, e.g. "in=64".
  std::vector<std::pair<Token, std::uint64_t>> kwargs_first() {
    std::vector<std::pair<Token, std::uint64_t>> out;
    if (peek().kind != Tok::ident) return out;
    do {
      Token key = next();
      if (key.kind != Tok::ident) fail(key, "expected keyword argument");
      expect_punct('=');
      out.emplace_back(key, number(1U << 20, "value"));
    } while (accept_punct(','));
    return out;
  }

  // name=value pairs after a leading comma, e.g. ", w=4, n=8".
  std::vector<std::pair<Token, std::uint64_t>> kwargs() {
    std::vector<std::pair<Token, std::uint64_t>> out;
    while (accept_punct(',')) {
      Token key = next();
      if (key.kind != Tok::ident) fail(key, "expected keyword argument");
      expect_punct('=');
      out.emplace_back(key, number(1U << 20, "value"));
    }
    return out;
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::size_t line_;
};

struct SlotText {
  std::string_view text;
  std::size_t col = 1;
};

std::uint8_t u8(std::uint64_t v) { return static_cast<std::uint8_t>(v); }
std::uint16_t u16(std::uint64_t v) { return static_cast<std::uint16_t>(v); }

class Assembler {
 public:
  explicit Assembler(Target t) : target_(t) {}

  ProgramImage run(std::string_view source) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool any_code = false;
    while (start <= source.size()) {
      std::size_t nl = source.find('\n', start);
      if (nl == std::string_view::npos) nl = source.size();
      std::string_view line = source.substr(start, nl - start);
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first != std::string_view::npos && line[first] == '.') {
        directive(line.substr(first), line_no, first + 1, any_code);
      } else if (first != std::string_view::npos) {
        std::size_t seg = 0;
        while (seg <= line.size()) {
          std::size_t semi = line.find(';', seg);
          if (semi == std::string_view::npos) semi = line.size();
          std::string_view text = line.substr(seg, semi - seg);
          if (text.find_first_not_of(" \t\r") != std::string_view::npos) {
            bundle(text, line_no, seg + 1);
            any_code = true;
          }
          seg = semi + 1;
        }
      }
      start = nl + 1;
    }
    img_.target = target_;
    return std::move(img_);
  }

 private:
  void directive(std::string_view text, std::size_t line, std::size_t col, bool any_code) {
    std::istringstream is{std::string(text)};
    std::string name;
    is >> name;
    if (name == ".target") {
      std::string t;
      is >> t;
      if (any_code) throw SyntaxError(line, col, ".target must precede code");
      try {
        target_ = parse_target(t);
      } catch (const std::invalid_argument& e) {
        throw SyntaxError(line, col, e.what());
      }
    } else if (name == ".param") {
      std::string hex, chunk;
      while (is >> chunk) hex += chunk;
      append_hex(hex, img_.param_image, line, col);
    } else if (name == ".table") {
      int idx = -1;
      std::string kind;
      if (!(is >> idx >> kind) || idx < 0 || idx >= static_cast<int>(kNumActTables)) {
        throw SyntaxError(line, col, ".table expects an index 0..3 and a kind");
      }
      if (kind == "hex") {
        std::string hex, chunk;
        while (is >> chunk) hex += chunk;
        std::vector<std::uint8_t> bytes;
        append_hex(hex, bytes, line, col);
        if (bytes.size() != 256) throw SyntaxError(line, col, ".table hex needs exactly 256 bytes");
        img_.act_tables[idx] = ActTable::from_bytes(std::span<const std::uint8_t, 256>(bytes.data(), 256));
      } else {
        try {
          img_.act_tables[idx] = build_act_table(parse_act_kind(kind));
        } catch (const std::invalid_argument& e) {
          throw SyntaxError(line, col, e.what());
        }
      }
    } else {
      throw SyntaxError(line, col, "unknown directive '" + name + "'");
    }
  }

  static void append_hex(const std::string& hex, std::vector<std::uint8_t>& out, std::size_t line, std::size_t col) {
    if (hex.size() % 2 != 0) throw SyntaxError(line, col, "odd number of hex digits");
    for (std::size_t i = 0; i < hex.size(); i += 2) {
      unsigned v = 0;
      auto [p, ec] = std::from_chars(hex.data() + i, hex.data() + i + 2, v, 16);
      if (ec != std::errc() || p != hex.data() + i + 2) throw SyntaxError(line, col, "bad hex byte");
      out.push_back(static_cast<std::uint8_t>(v));
    }
  }

  void bundle(std::string_view text, std::size_t line, std::size_t col0) {
    Bundle b;
    bool has_compute = false, has_param = false, has_data = false;
    std::size_t seg = 0;
    while (seg <= text.size()) {
      std::size_t bar = text.find('|', seg);
      if (bar == std::string_view::npos) bar = text.size();
      SlotParser p(lex(text.substr(seg, bar - seg), line, col0 + seg), line);
      const Token head = p.next();
      if (head.kind != Tok::ident) p.fail(head, "expected mnemonic");
      const std::string& m = head.text;
      auto claim = [&](bool& flag, const char* slot) {
        if (flag) p.fail(head, std::string("bundle has two ") + slot + " instructions");
        flag = true;
      };
      if (m == "NOP") {
        p.expect_end();
      } else if (m == "LDP") {
        claim(has_param, "param-slot");
        b.param = parse_ldp(p);
      } else if (m == "LDR" || m == "STR") {
        claim(has_data, "data-slot");
        b.data = parse_data(p, m, head);
      } else {
        claim(has_compute, "compute-slot");
        b.compute = parse_compute(p, m, head);
      }
      p.expect_end();
      seg = bar + 1;
    }
    try {
      (void)encode_bundle(b, target_);
    } catch (const FormatError& e) {
      throw SyntaxError(line, col0, e.what());
    }
    img_.bundles.push_back(b);
  }

  ComputeOp parse_compute(SlotParser& p, const std::string& m, const Token& head) {
    const bool fpe = target_ == Target::fpe;
    if (m == "START") {
      StartOp s;
      for (auto& [k, v] : p.kwargs_first()) {
        if (k.text != "in") p.fail(k, "unknown START argument '" + k.text + "'");
        s.in_len = u16(v);
      }
      return s;
    }
    if (m == "FIN") {
      FinOp f;
      auto set = [&](const Token& k, std::uint64_t v) {
        if (k.text == "rows" && v <= 255) f.rows = u16(v);
        else if (k.text == "cols" && v <= 4095) f.cols = u16(v);
        else p.fail(k, "FIN accepts cols (<= 4095) and rows=R (<= 255)");
      };
      if (p.peek().kind == Tok::number) {
        f.cols = u16(p.number(4095, "output length"));
        for (auto& [k, v] : p.kwargs()) set(k, v);
      } else {
        for (auto& [k, v] : p.kwargs_first()) set(k, v);
      }
      return f;
    }
    if (m == "MV" || m == "MVA" || m == "MVAA") {
      if (!fpe) p.fail(head, m + " is not an HPE instruction (target mismatch)");
      MvOp op;
      op.op = m == "MV" ? Opcode::MV : (m == "MVA" ? Opcode::MVA : Opcode::MVAA);
      if (op.op == Opcode::MVAA && p.peek().kind == Tok::ident && p.peek().text.rfind("acc", 0) == 0) {
        op.multiply = false;
      } else {
        op.src = u8(p.indexed("r", 31, "register"));
        p.expect_punct(',');
        op.pbuf = u8(p.indexed("p", 1, "param buffer"));
        if (op.op != Opcode::MVAA) {
          p.expect_arrow();
          op.acc = u8(p.indexed("acc", 3, "accumulator group"));
          return op;
        }
        p.expect_punct(',');
      }
      op.acc = u8(p.indexed("acc", 3, "accumulator group"));
      p.expect_punct(',');
      op.table = u8(p.indexed("t", 3, "activation table"));
      p.expect_arrow();
      if (p.peek().kind == Tok::ident && p.peek().text.rfind("out", 0) == 0) {
        op.dst_kind = FpeDest::out;
        op.dst = u8(p.indexed("out", 31, "output word"));
      } else {
        op.dst = u8(p.indexed("r", 31, "register"));
      }
      if (p.accept_punct('.')) {
        const Token t = p.peek();
        const auto lane = p.number(24, "lane");
        if (lane % 8 != 0) p.fail(t, "destination lane must be 0, 8, 16 or 24");
        op.dst_lane = u8(lane);
      }
      return op;
    }
    if (m == "MM" || m == "ACC" || m == "ACCA" || m == "ACCP") {
      if (fpe) p.fail(head, m + " is not an FPE instruction (target mismatch)");
      if (m == "MM") {
        MmOp op;
        expect_bank(p, "b1");
        op.src = u16(bracket(p, 1023));
        p.expect_punct(',');
        op.rows = u16(p.number(256, "row count"));
        p.expect_arrow();
        const Token t = p.peek();
        const std::string bank = p.ident();
        if (bank != "b2" && bank != "b3") p.fail(t, "MM writes b2 or b3");
        op.dst_bank = bank == "b2" ? 2 : 3;
        op.dst = u16(bracket(p, 1023));
        return op;
      }
      AccOp op;
      op.op = m == "ACC" ? Opcode::ACC : (m == "ACCA" ? Opcode::ACCA : Opcode::ACCP);
      const Token t = p.peek();
      const std::string src = p.ident();
      if (src == "b23") op.operands = AccOperands::both;
      else if (src == "b2") op.operands = AccOperands::bank2;
      else if (src == "b3") op.operands = AccOperands::bank3;
      else p.fail(t, "ACC reads b2, b3 or b23");
      op.offset = u16(bracket(p, 1023));
      p.expect_punct(',');
      op.len = u16(p.number(256, "row count"));
      if (op.op != Opcode::ACC) {
        p.expect_punct(',');
        op.table = u8(p.indexed("t", 3, "activation table"));
      }
      if (op.op == Opcode::ACCP) {
        p.expect_punct(',');
        const Token kw = p.next();
        if (kw.kind != Tok::ident || kw.text != "pool") p.fail(kw, "expected 'pool W/S'");
        op.pool_window = u8(p.number(4, "pool window"));
        p.expect_punct('/');
        op.pool_stride = u8(p.number(4, "pool stride"));
        if (op.pool_window == 0 || op.pool_stride == 0) p.fail(kw, "pool window and stride must be >= 1");
      }
      p.expect_arrow();
      const Token d = p.peek();
      const std::string dst = p.ident();
      if (op.op == Opcode::ACC) {
        if (dst == "b2") op.dst_kind = HpeDest::bank2;
        else if (dst == "b3") op.dst_kind = HpeDest::bank3;
        else p.fail(d, "ACC writes b2 or b3");
        op.dst = u16(bracket(p, 1023));
      } else {
        if (dst == "b1") op.dst_kind = HpeDest::bank1;
        else if (dst == "out") op.dst_kind = HpeDest::out;
        else p.fail(d, m + " writes b1 or out");
        op.dst = u16(bracket(p, 1023));
      }
      return op;
    }
    p.fail(head, "unknown mnemonic '" + m + "'");
  }

  LdpOp parse_ldp(SlotParser& p) {
    LdpOp op;
    if (target_ == Target::fpe) {
      op.pbuf = u8(p.indexed("p", 1, "param buffer"));
      p.expect_punct(',');
      op.addr = static_cast<std::uint32_t>(p.number(0xFFFF, "pCache address"));
      p.expect_punct(',');
      const Token t = p.peek();
      op.len = u16(p.number(kFpeBlockBytes, "length"));
      if (op.len == 0 || op.len % 8 != 0) p.fail(t, "LDP length must be a multiple of 8 in [8, 256]");
    } else {
      op.addr = static_cast<std::uint32_t>(p.indexed("tile", 511, "weight tile"));
    }
    return op;
  }

  DataOp parse_data(SlotParser& p, const std::string& m, const Token& head) {
    if (target_ == Target::fpe) {
      if (m == "STR") {
        StrOp op;
        op.src = u8(p.indexed("r", 31, "register"));
        p.expect_punct(',');
        expect_bank(p, "out");
        op.out_word = u8(bracket(p, 31));
        for (auto& [k, v] : p.kwargs()) {
          if (k.text != "n" || v < 1 || v > 8) p.fail(k, "STR accepts n=1..8");
          op.len = u8(v);
        }
        return op;
      }
      LdrOp op;
      op.dst = u8(p.indexed("r", 31, "register"));
      p.expect_punct(',');
      const Token s = p.peek();
      const std::string src = p.ident();
      if (src == "in") {
        op.src = LdrSource::input;
        op.src_word = u8(bracket(p, 7));
      } else if (src == "one") {
        op.src = LdrSource::one;
      } else if (src == "zero") {
        op.src = LdrSource::zero;
      } else {
        p.fail(s, "LDR source must be in[N], one or zero");
      }
      for (auto& [k, v] : p.kwargs()) {
        if (k.text != "n" || v < 1 || v > 8) p.fail(k, "LDR accepts n=1..8");
        op.len = u8(v);
      }
      return op;
    }
    if (m == "STR") p.fail(head, "STR is not an HPE instruction (target mismatch)");
    GatherOp op;
    expect_bank(p, "b1");
    op.dst = u16(bracket(p, 1023));
    if (p.accept_punct('.')) op.dst_lane = u8(p.number(31, "lane"));
    p.expect_punct(',');
    const Token s = p.peek();
    const std::string src = p.ident();
    if (src == "in") {
      op.src = LdrSource::input;
      op.src_base = u16(bracket(p, 1023));
    } else if (src == "b1") {
      op.src = LdrSource::bank1;
      op.src_base = u16(bracket(p, 1023));
    } else if (src == "one") {
      op.src = LdrSource::one;
    } else if (src == "zero") {
      op.src = LdrSource::zero;
    } else {
      p.fail(s, "LDR source must be in[N], b1[N], one or zero");
    }
    for (auto& [k, v] : p.kwargs()) {
      if (k.text == "w") {
        if (v < 1 || v > 32) p.fail(k, "w must be 1..32");
        op.width = u8(v);
      } else if (k.text == "n") {
        if (v < 1 || v > 64) p.fail(k, "n must be 1..64");
        op.rows = u8(v);
      } else if (k.text == "s") {
        if (v > 63) p.fail(k, "s must be 0..63");
        op.src_stride = u8(v);
      } else {
        p.fail(k, "unknown LDR argument '" + k.text + "'");
      }
    }
    return op;
  }

  static void expect_bank(SlotParser& p, std::string_view name) {
    const Token t = p.next();
    if (t.kind != Tok::ident || t.text != name) p.fail(t, "expected '" + std::string(name) + "'");
  }
  static std::uint64_t bracket(SlotParser& p, std::uint64_t max) {
    p.expect_punct('[');
    const auto v = p.number(max, "address");
    p.expect_punct(']');
    return v;
  }

  Target target_;
  ProgramImage img_;
};

std::string hex_bytes(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xF]);
  }
  return s;
}

std::string format_compute(const ComputeOp& c) {
  std::ostringstream os;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, StartOp>) {
          os << "START";
          if (o.in_len != 0) os << " in=" << o.in_len;
        } else if constexpr (std::is_same_v<T, FinOp>) {
          os << "FIN";
          if (o.cols != 0 || o.rows != 1) os << ' ' << o.cols;
          if (o.rows != 1) os << ", rows=" << o.rows;
        } else if constexpr (std::is_same_v<T, MvOp>) {
          os << mnemonic(o.op) << ' ';
          if (o.multiply) {
            os << 'r' << +o.src << ", p" << +o.pbuf;
            if (o.op != Opcode::MVAA) {
              os << " -> acc" << +o.acc;
              return;
            }
            os << ", ";
          }
          os << "acc" << +o.acc << ", t" << +o.table << " -> " << (o.dst_kind == FpeDest::out ? "out" : "r") << +o.dst;
          if (o.dst_lane != 0) os << '.' << +o.dst_lane;
        } else if constexpr (std::is_same_v<T, MmOp>) {
          os << "MM b1[" << o.src << "], " << o.rows << " -> b" << +o.dst_bank << '[' << o.dst << ']';
        } else if constexpr (std::is_same_v<T, AccOp>) {
          static constexpr const char* srcs[] = {"b23", "b2", "b3"};
          os << mnemonic(o.op) << ' ' << srcs[static_cast<int>(o.operands)] << '[' << o.offset << "], " << o.len;
          if (o.op != Opcode::ACC) os << ", t" << +o.table;
          if (o.op == Opcode::ACCP) os << ", pool " << +o.pool_window << '/' << +o.pool_stride;
          static constexpr const char* dsts[] = {"b1", "b2", "b3", "out"};
          os << " -> " << dsts[static_cast<int>(o.dst_kind)] << '[' << o.dst << ']';
        }
      },
      c);
  return os.str();
}

std::string format_param(const LdpOp& p, Target t) {
  std::ostringstream os;
  if (t == Target::fpe) {
    os << "LDP p" << +p.pbuf << ", 0x" << std::hex << p.addr << std::dec << ", " << p.len;
  } else {
    os << "LDP tile" << p.addr;
  }
  return os.str();
}

std::string format_data(const DataOp& d) {
  std::ostringstream os;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, LdrOp>) {
          os << "LDR r" << +o.dst << ", ";
          if (o.src == LdrSource::input) os << "in[" << +o.src_word << ']';
          else os << (o.src == LdrSource::one ? "one" : "zero");
          if (o.len != 1) os << ", n=" << +o.len;
        } else if constexpr (std::is_same_v<T, StrOp>) {
          os << "STR r" << +o.src << ", out[" << +o.out_word << ']';
          if (o.len != 1) os << ", n=" << +o.len;
        } else if constexpr (std::is_same_v<T, GatherOp>) {
          os << "LDR b1[" << o.dst << ']';
          if (o.dst_lane != 0) os << '.' << +o.dst_lane;
          os << ", ";
          switch (o.src) {
            case LdrSource::input: os << "in[" << o.src_base << ']'; break;
            case LdrSource::bank1: os << "b1[" << o.src_base << ']'; break;
            case LdrSource::one: os << "one"; break;
            case LdrSource::zero: os << "zero"; break;
          }
          os << ", w=" << +o.width << ", n=" << +o.rows;
          if (o.src == LdrSource::input || o.src == LdrSource::bank1) os << ", s=" << +o.src_stride;
        }
      },
      d);
  return os.str();
}

}  // namespace

ProgramImage assemble(std::string_view source, Target target) {
  return assemble(source, target, default_limits(target));
}

ProgramImage assemble_unchecked(std::string_view source, Target target) { return Assembler(target).run(source); }

ProgramImage assemble(std::string_view source, Target target, const TargetLimits& limits) {
  ProgramImage img = Assembler(target).run(source);
  TargetLimits l = limits;
  if (img.target != l.target) l = default_limits(img.target);
  require_valid(img, l);
  return img;
}

std::string format_bundle(const Bundle& b, Target t) {
  std::string out;
  auto add = [&](const std::string& s) {
    if (!out.empty()) out += " | ";
    out += s;
  };
  if (!std::holds_alternative<NopOp>(b.compute)) add(format_compute(b.compute));
  if (const auto* p = std::get_if<LdpOp>(&b.param)) add(format_param(*p, t));
  if (!std::holds_alternative<NopOp>(b.data)) add(format_data(b.data));
  return out.empty() ? "NOP" : out;
}

std::string disassemble(const ProgramImage& img) {
  std::ostringstream os;
  if (img.target != Target::fpe) os << ".target " << to_string(img.target) << '\n';
  const ActTable identity = build_act_table(ActKind::identity);
  for (std::size_t i = 0; i < img.act_tables.size(); ++i) {
    const ActTable& t = img.act_tables[i];
    if (t == identity) continue;
    const ActTable rebuilt = ActTable::from_bytes(t.to_bytes());
    if (rebuilt.kind == ActKind::custom) {
      const auto bytes = t.to_bytes();
      os << ".table " << i << " hex " << hex_bytes(bytes) << '\n';
    } else {
      os << ".table " << i << ' ' << to_string(rebuilt.kind) << '\n';
    }
  }
  const auto& pi = img.param_image;
  for (std::size_t off = 0; off < pi.size(); off += 32) {
    const std::size_t n = std::min<std::size_t>(32, pi.size() - off);
    os << ".param " << hex_bytes(std::span<const std::uint8_t>(pi.data() + off, n)) << '\n';
  }
  for (const auto& b : img.bundles) os << format_bundle(b, img.target) << '\n';
  return os.str();
}

}  // namespace kscope
