#include "kscope/hpe_sim.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "kscope/errors.hpp"

namespace kscope {

namespace {

constexpr std::uint64_t kCycleLimit = 100'000'000;

bool overlaps(std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) { return alo < bhi && blo < ahi; }

}  // namespace

void HpeConfig::check() const {
  if (array_dim != kHpeTileDim) throw std::invalid_argument("HPE array_dim must be 32");
  if (bank_words == 0 || bank_words > 1024) throw std::invalid_argument("bank_words must be in [1, 1024]");
  if (out_words == 0 || out_words > 1024) throw std::invalid_argument("out_words must be in [1, 1024]");
  if (ports_per_bank < 2) throw std::invalid_argument("ports_per_bank must be >= 2");
  if (input_bytes > 1024) throw std::invalid_argument("input_bytes must be <= 1024");
  if (pcache_bytes > 512 * kHpeTileBytes) throw std::invalid_argument("pcache_bytes exceeds the 9-bit tile index space");
}

TargetLimits HpeConfig::limits() const {
  TargetLimits l;
  l.target = Target::hpe;
  l.icache_bytes = icache_bytes;
  l.pcache_bytes = pcache_bytes;
  l.bank_words = bank_words;
  l.out_words = out_words;
  l.max_input_bytes = input_bytes;
  return l;
}

Fix8 maxpool(std::span<const Fix8> window) {
  if (window.empty()) throw std::invalid_argument("maxpool of an empty window");
  return *std::max_element(window.begin(), window.end());
}

HpeSim::HpeSim(HpeConfig cfg) : cfg_(cfg) { cfg_.check(); }

void HpeSim::load_program(const ProgramImage& img) {
  require_valid(img, cfg_.limits());
  load_unchecked(img);
}

void HpeSim::load_unchecked(const ProgramImage& img) {
  if (img.target != Target::hpe) throw std::invalid_argument("HPE cannot load an FPE program");
  img_ = img;
  pcache_.assign(std::max(cfg_.pcache_bytes, img.param_image.size()), 0);
  std::copy(img.param_image.begin(), img.param_image.end(), pcache_.begin());
  loaded_ = true;
}

void HpeSim::fault(const std::string& msg) {
  if (!st_.fault) st_.fault = PeFault{st_.pc, msg};
  st_.halted = true;
}

bool HpeSim::unit_busy(Unit u) const {
  return std::any_of(active_.begin(), active_.end(), [&](const Active& a) { return a.unit == u; });
}

bool HpeSim::conflicts(const std::vector<Region>& regions) const {
  for (const auto& a : active_) {
    for (const auto& r : a.regions) {
      for (const auto& n : regions) {
        if (r.bank == n.bank && (r.write || n.write) && overlaps(r.lo, r.hi, n.lo, n.hi)) return true;
      }
    }
  }
  return false;
}

bool HpeSim::start_compute(const ComputeOp& op, std::size_t pc, std::vector<Active>& started) {
  const std::size_t words = cfg_.bank_words;
  if (const auto* m = std::get_if<MmOp>(&op)) {
    if (m->src + m->rows > words || m->dst + m->rows > words || (m->dst_bank != 2 && m->dst_bank != 3)) {
      fault("MM operand rows out of range");
      return false;
    }
    Active a;
    a.unit = Unit::sa;
    a.op = Opcode::MM;
    a.pc = pc;
    a.rows = m->rows;
    a.duration = cfg_.mm_cycles(m->rows);
    a.read_a = 1;
    a.write_bank = m->dst_bank;
    a.write_from = 2 * cfg_.array_dim - 1;
    a.regions = {{1, m->src, std::size_t{m->src} + m->rows, false}, {m->dst_bank, m->dst, std::size_t{m->dst} + m->rows, true}};
    started.push_back(std::move(a));
  } else if (const auto* c = std::get_if<AccOp>(&op)) {
    if (c->offset + c->len > words) {
      fault("ACC operand rows out of range");
      return false;
    }
    std::size_t written = c->len;
    if (c->op == Opcode::ACCP) {
      if (c->pool_window == 0 || c->pool_stride == 0 || c->pool_window > c->len) {
        fault("ACCP pool window larger than the merged rows");
        return false;
      }
      written = (c->len - c->pool_window) / c->pool_stride + 1;
    }
    const int dbank = c->dst_kind == HpeDest::out ? 0
                      : c->dst_kind == HpeDest::bank1 ? 1
                      : c->dst_kind == HpeDest::bank2 ? 2
                                                      : 3;
    if (c->dst + written > (dbank == 0 ? cfg_.out_words : words)) {
      fault("ACC destination rows out of range");
      return false;
    }
    Active a;
    a.unit = Unit::accu;
    a.op = c->op;
    a.pc = pc;
    a.rows = c->len;
    a.duration = c->len;
    if (c->operands != AccOperands::bank3) a.read_a = 2;
    if (c->operands != AccOperands::bank2) a.read_b = 3;
    a.write_bank = dbank;
    a.write_steps.assign(c->len, c->op != Opcode::ACCP);
    if (c->op == Opcode::ACCP) {
      for (std::size_t o = 0; o < written; ++o) a.write_steps[o * c->pool_stride + c->pool_window - 1] = true;
    }
    if (a.read_a) a.regions.push_back({2, c->offset, std::size_t{c->offset} + c->len, false});
    if (a.read_b) a.regions.push_back({3, c->offset, std::size_t{c->offset} + c->len, false});
    a.regions.push_back({dbank, c->dst, c->dst + written, true});
    started.push_back(std::move(a));
  } else if (std::holds_alternative<MvOp>(op)) {
    fault("FPE instruction on HPE");
    return false;
  }
  return true;
}

bool HpeSim::start_param(const ParamOp& op, std::size_t pc, std::vector<Active>& started) {
  const auto* l = std::get_if<LdpOp>(&op);
  if (!l) return true;
  if ((static_cast<std::size_t>(l->addr) + 1) * kHpeTileBytes > pcache_.size()) {
    fault("LDP tile beyond pCache");
    return false;
  }
  Active a;
  a.unit = Unit::param;
  a.op = Opcode::LDP;
  a.pc = pc;
  a.duration = cfg_.weight_preload_cycles;
  started.push_back(std::move(a));
  return true;
}

bool HpeSim::start_data(const DataOp& op, std::size_t pc, std::vector<Active>& started) {
  if (std::holds_alternative<LdrOp>(op) || std::holds_alternative<StrOp>(op)) {
    fault("FPE data instruction on HPE");
    return false;
  }
  const auto* g = std::get_if<GatherOp>(&op);
  if (!g) return true;
  const std::size_t last = g->src_base + static_cast<std::size_t>(g->rows - 1) * g->src_stride;
  if (g->dst + g->rows > cfg_.bank_words || g->dst_lane + g->width > kLanes ||
      (g->src == LdrSource::input && last + g->width > cfg_.input_bytes) ||
      (g->src == LdrSource::bank1 && last >= cfg_.bank_words)) {
    fault("LDR operands out of range");
    return false;
  }
  Active a;
  a.unit = Unit::loader;
  a.op = Opcode::LDR;
  a.pc = pc;
  a.rows = g->rows;
  a.duration = g->rows;
  a.write_bank = 1;
  a.write_steps.assign(g->rows, true);
  a.regions.push_back({1, g->dst, std::size_t{g->dst} + g->rows, true});
  if (g->src == LdrSource::bank1) {
    a.read_a = 1;
    a.regions.push_back({1, g->src_base, last + 1, false});
  }
  started.push_back(std::move(a));
  return true;
}

bool HpeSim::try_issue(const Bundle& b, std::size_t pc) {
  if (std::holds_alternative<FinOp>(b.compute)) return active_.empty();

  std::vector<Active> started;
  if (!start_compute(b.compute, pc, started) || !start_param(b.param, pc, started) ||
      !start_data(b.data, pc, started)) {
    return false;
  }
  for (const auto& a : started) {
    if (unit_busy(a.unit) || conflicts(a.regions)) return false;
  }
  // MM latches the shadow weights, so an in-flight LDP must finish first.
  if (std::holds_alternative<MmOp>(b.compute) && unit_busy(Unit::param)) return false;

  // Architectural effects, in slot order: compute, param, data.
  if (const auto* m = std::get_if<MmOp>(&b.compute)) {
    st_.weights = st_.shadow;
    auto& dst = m->dst_bank == 2 ? st_.bank2 : st_.bank3;
    for (std::size_t r = 0; r < m->rows; ++r) {
      const Word& in = st_.bank1[m->src + r];
      AccWord outw{};
      for (std::size_t j = 0; j < kLanes; ++j) {
        WideAcc s{};
        for (std::size_t k = 0; k < kLanes; ++k) s = acc_add(s, mul(in[k], st_.weights[k * kLanes + j]));
        outw[j] = s;
      }
      dst[m->dst + r] = outw;
    }
  } else if (const auto* c = std::get_if<AccOp>(&b.compute)) {
    std::vector<AccWord> sums(c->len);
    for (std::size_t i = 0; i < c->len; ++i) {
      for (std::size_t j = 0; j < kLanes; ++j) {
        WideAcc s{};
        if (c->operands != AccOperands::bank3) s = acc_add(s, st_.bank2[c->offset + i][j]);
        if (c->operands != AccOperands::bank2) s = acc_add(s, st_.bank3[c->offset + i][j]);
        sums[i][j] = s;
      }
    }
    if (c->op == Opcode::ACC) {
      auto& dst = c->dst_kind == HpeDest::bank2 ? st_.bank2 : st_.bank3;
      for (std::size_t i = 0; i < c->len; ++i) dst[c->dst + i] = sums[i];
    } else {
      const ActTable& t = img_.act_tables[c->table];
      std::vector<Word> act(c->len);
      for (std::size_t i = 0; i < c->len; ++i) {
        for (std::size_t j = 0; j < kLanes; ++j) act[i][j] = activate(t, requantize(sums[i][j]));
      }
      auto& dst = c->dst_kind == HpeDest::out ? st_.out : st_.bank1;
      if (c->op == Opcode::ACCA) {
        for (std::size_t i = 0; i < c->len; ++i) dst[c->dst + i] = act[i];
      } else {
        const std::size_t n = (c->len - c->pool_window) / c->pool_stride + 1;
        std::vector<Fix8> win(c->pool_window);
        for (std::size_t o = 0; o < n; ++o) {
          Word w{};
          for (std::size_t j = 0; j < kLanes; ++j) {
            for (std::size_t q = 0; q < c->pool_window; ++q) win[q] = act[o * c->pool_stride + q][j];
            w[j] = maxpool(win);
          }
          dst[c->dst + o] = w;
        }
      }
    }
  }
  if (const auto* l = std::get_if<LdpOp>(&b.param)) {
    for (std::size_t i = 0; i < kHpeTileBytes; ++i) st_.shadow[i] = Fix8::from_bits(pcache_[l->addr * kHpeTileBytes + i]);
  }
  if (const auto* g = std::get_if<GatherOp>(&b.data)) {
    std::vector<Word> src(g->rows);
    for (std::size_t r = 0; r < g->rows; ++r) {
      const std::size_t row = g->src_base + r * g->src_stride;
      for (std::size_t q = 0; q < g->width; ++q) {
        switch (g->src) {
          case LdrSource::input: src[r][q] = byte_to_fix8(st_.input[row + q]); break;
          case LdrSource::bank1: src[r][q] = st_.bank1[row][q]; break;
          case LdrSource::one: src[r][q] = kFix8One; break;
          case LdrSource::zero: src[r][q] = kFix8Zero; break;
        }
      }
    }
    for (std::size_t r = 0; r < g->rows; ++r) {
      std::copy_n(src[r].begin(), g->width, st_.bank1[g->dst + r].begin() + g->dst_lane);
    }
  }
  for (auto& a : started) {
    a.issue = st_.cycle;
    active_.push_back(std::move(a));
  }
  return true;
}

void HpeSim::demand(const Active& a, std::array<std::size_t, 4>& use) const {
  const std::uint64_t s = a.progress;
  if (a.op == Opcode::MM) {
    if (s < a.rows) ++use[1];
    if (s >= a.write_from) ++use[a.write_bank];
    return;
  }
  if (a.read_a) ++use[a.read_a];
  if (a.read_b) ++use[a.read_b];
  if (a.write_bank != 0 && s < a.write_steps.size() && a.write_steps[s]) ++use[a.write_bank];
}

HpeResult HpeSim::run_inference(std::span<const std::uint8_t> input, std::ostream* trace) {
  if (!loaded_) throw std::logic_error("no program loaded");
  if (auto s = img_.start(); s && s->in_len != 0 && s->in_len != input.size()) {
    throw DimensionError("program expects " + std::to_string(s->in_len) + " input bytes, got " +
                         std::to_string(input.size()));
  }
  if (input.size() > cfg_.input_bytes) throw DimensionError("input exceeds the HPE input buffer");
  st_ = HpeState{};
  st_.bank1.assign(cfg_.bank_words, Word{});
  st_.bank2.assign(cfg_.bank_words, AccWord{});
  st_.bank3.assign(cfg_.bank_words, AccWord{});
  st_.out.assign(cfg_.out_words, Word{});
  std::copy(input.begin(), input.end(), st_.input.begin());
  active_.clear();
  events_.clear();
  max_bank_accesses_ = 0;

  std::optional<FinOp> fin;
  while (!st_.halted) {
    if (st_.cycle > kCycleLimit) {
      fault("cycle limit exceeded");
      break;
    }
    std::string issued;
    if (st_.pc >= img_.bundles.size()) {
      fault("ran past the last bundle without FIN");
      break;
    }
    const std::size_t pc = st_.pc;
    const Bundle& b = img_.bundles[pc];
    if (try_issue(b, pc)) {
      if (trace) issued = format_bundle(b, Target::hpe);
      if (const auto* f = std::get_if<FinOp>(&b.compute)) {
        fin = *f;
        st_.halted = true;
        if (trace) *trace << "cycle=" << st_.cycle << " pc=" << st_.pc << " issue=" << issued << '\n';
        break;
      }
      ++st_.pc;
    }
    if (st_.fault) break;

    // Port arbitration in issue order; an op that cannot get all its ports waits a cycle.
    std::array<std::size_t, 4> granted{};
    bool blocked = false;
    for (auto& a : active_) {
      std::array<std::size_t, 4> want{};
      demand(a, want);
      bool ok = true;
      for (int bank = 1; bank <= 3; ++bank) ok = ok && granted[bank] + want[bank] <= cfg_.ports_per_bank;
      if (!ok) {
        blocked = true;
        continue;
      }
      for (int bank = 1; bank <= 3; ++bank) granted[bank] += want[bank];
      ++a.progress;
    }
    if (blocked) ++st_.stall_cycles;
    for (int bank = 1; bank <= 3; ++bank) max_bank_accesses_ = std::max(max_bank_accesses_, granted[bank]);
    if (trace) {
      *trace << "cycle=" << st_.cycle << " pc=" << pc << " issue=" << (issued.empty() ? "-" : issued)
             << " b1=" << granted[1] << " b2=" << granted[2] << " b3=" << granted[3] << " stall=" << (blocked ? 1 : 0)
             << '\n';
    }
    ++st_.cycle;
    for (auto it = active_.begin(); it != active_.end();) {
      if (it->progress >= it->duration) {
        events_.push_back({it->pc, it->op, it->issue, st_.cycle});
        it = active_.erase(it);
      } else {
        ++it;
      }
    }
  }

  HpeResult r;
  r.stall_cycles = st_.stall_cycles;
  r.max_bank_accesses = max_bank_accesses_;
  r.events = events_;
  r.fault = st_.fault;
  if (r.fault) {
    r.cycles = st_.cycle;
    return r;
  }
  r.cycles = st_.cycle + cfg_.drain_cycles;
  st_.cycle = r.cycles;
  r.rows = fin->rows;
  r.cols = fin->cols;
  const std::size_t wpr = (fin->cols + kLanes - 1) / kLanes;
  if (r.rows * wpr > cfg_.out_words) {
    fault("FIN output shape exceeds the output buffer");
    r.fault = st_.fault;
    return r;
  }
  for (std::size_t row = 0; row < r.rows; ++row) {
    for (std::size_t c = 0; c < r.cols; ++c) r.output.elems.push_back(st_.out[row * wpr + c / kLanes][c % kLanes]);
  }
  r.output.logical_len = r.output.elems.size();
  return r;
}

}  // namespace kscope
