#include "kscope/fpe_sim.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "kscope/errors.hpp"

namespace kscope {

void FpeConfig::check() const {
  if (n * k != kFpeBlockRows || t != kFpeBlockCols) {
    throw std::invalid_argument("FPE config must satisfy n*k == 32 and t == 8");
  }
  if (regfile_words == 0 || regfile_words > 32) throw std::invalid_argument("regfile_words must be in [1, 32]");
  if (acc_groups == 0 || acc_groups > 4) throw std::invalid_argument("acc_groups must be in [1, 4]");
  if (out_words == 0 || out_words > 32) throw std::invalid_argument("out_words must be in [1, 32]");
  if (pcache_bytes > 65536) throw std::invalid_argument("pcache_bytes exceeds the 16-bit LDP address space");
  if (input_bytes > 256) throw std::invalid_argument("input_bytes must be <= 256");
}

TargetLimits FpeConfig::limits() const {
  TargetLimits l;
  l.target = Target::fpe;
  l.icache_bytes = icache_bytes;
  l.pcache_bytes = pcache_bytes;
  l.regfile_words = regfile_words;
  l.acc_groups = acc_groups;
  l.out_words = out_words;
  l.max_input_bytes = input_bytes;
  return l;
}

FpeSim::FpeSim(FpeConfig cfg) : cfg_(cfg) { cfg_.check(); }

void FpeSim::load_program(const ProgramImage& img) {
  require_valid(img, cfg_.limits());
  load_unchecked(img);
}

void FpeSim::load_unchecked(const ProgramImage& img) {
  if (img.target != Target::fpe) throw std::invalid_argument("FPE cannot load an HPE program");
  img_ = img;
  pcache_.assign(std::max(cfg_.pcache_bytes, img.param_image.size()), 0);
  std::copy(img.param_image.begin(), img.param_image.end(), pcache_.begin());
  loaded_ = true;
}

void FpeSim::begin(std::span<const std::uint8_t> input) {
  if (!loaded_) throw std::logic_error("no program loaded");
  if (auto s = img_.start(); s && s->in_len != 0 && s->in_len != input.size()) {
    throw DimensionError("program expects " + std::to_string(s->in_len) + " input bytes, got " +
                         std::to_string(input.size()));
  }
  if (input.size() > cfg_.input_bytes) throw DimensionError("input exceeds the FPE input buffer");
  st_ = FpeState{};
  st_.regfile.assign(cfg_.regfile_words, Word{});
  st_.acc.assign(cfg_.acc_groups, {});
  st_.out.assign(cfg_.out_words, Word{});
  std::copy(input.begin(), input.end(), st_.input.begin());
  pending_.clear();
}

void FpeSim::fault(const std::string& msg) {
  if (!st_.fault) st_.fault = PeFault{st_.pc, msg};
  st_.halted = true;
}

void FpeSim::retire(std::uint64_t upto) {
  auto it = std::stable_partition(pending_.begin(), pending_.end(), [&](const Pending& p) { return p.visible > upto; });
  std::vector<Pending> done(std::make_move_iterator(it), std::make_move_iterator(pending_.end()));
  pending_.erase(it, pending_.end());
  std::stable_sort(done.begin(), done.end(), [](const Pending& a, const Pending& b) { return a.visible < b.visible; });
  for (const auto& p : done) {
    switch (p.kind) {
      case Pending::Kind::regfile:
        std::copy(p.values.begin(), p.values.end(), st_.regfile[p.index].begin() + static_cast<std::ptrdiff_t>(p.lane));
        break;
      case Pending::Kind::out:
        std::copy(p.values.begin(), p.values.end(), st_.out[p.index].begin() + static_cast<std::ptrdiff_t>(p.lane));
        break;
      case Pending::Kind::pbuf:
        std::copy(p.values.begin(), p.values.end(), st_.pbuf[p.index].begin());
        break;
    }
  }
}

bool FpeSim::pending_write(Pending::Kind kind, std::size_t index) const {
  return std::any_of(pending_.begin(), pending_.end(),
                     [&](const Pending& p) { return p.kind == kind && p.index == index; });
}

void FpeSim::exec_compute(const ComputeOp& op) {
  if (const auto* fin = std::get_if<FinOp>(&op)) {
    if (fin->rows != 1 || fin->cols > cfg_.out_words * kLanes) return fault("FIN output shape exceeds the output buffer");
    st_.halted = true;
    return;
  }
  const auto* m = std::get_if<MvOp>(&op);
  if (!m) {
    if (std::holds_alternative<MmOp>(op) || std::holds_alternative<AccOp>(op)) fault("HPE instruction on FPE");
    return;
  }
  if (m->acc >= cfg_.acc_groups) return fault("accumulator group out of range");
  auto& acc = st_.acc[m->acc];
  if (m->multiply) {
    if (m->src >= cfg_.regfile_words) return fault("MV source word beyond regfile");
    if (pending_write(Pending::Kind::regfile, m->src)) ++st_.raw_hazards;
    if (pending_write(Pending::Kind::pbuf, m->pbuf)) ++st_.raw_hazards;
    const Word& v = st_.regfile[m->src];
    const auto& w = st_.pbuf[m->pbuf];
    for (std::size_t j = 0; j < kFpeBlockCols; ++j) {
      WideAcc sum = m->op == Opcode::MV ? WideAcc{} : acc[j];
      for (std::size_t r = 0; r < kFpeBlockRows; ++r) sum = acc_add(sum, mul(v[r], w[r * kFpeBlockCols + j]));
      acc[j] = sum;
    }
  }
  if (m->op != Opcode::MVAA) return;
  if (m->dst_lane + kFpeBlockCols > kLanes) return fault("destination lane out of range");
  Pending p;
  p.visible = st_.cycle + cfg_.pipeline_depth;
  p.lane = m->dst_lane;
  p.index = m->dst;
  if (m->dst_kind == FpeDest::regfile) {
    if (m->dst >= cfg_.regfile_words) return fault("MVAA destination beyond regfile");
    p.kind = Pending::Kind::regfile;
  } else {
    if (m->dst >= cfg_.out_words) return fault("MVAA destination beyond output buffer");
    p.kind = Pending::Kind::out;
  }
  const ActTable& table = img_.act_tables[m->table];
  for (std::size_t j = 0; j < kFpeBlockCols; ++j) p.values.push_back(activate(table, requantize(acc[j])));
  pending_.push_back(std::move(p));
  acc.fill(WideAcc{});
}

void FpeSim::exec_param(const ParamOp& op) {
  const auto* l = std::get_if<LdpOp>(&op);
  if (!l) return;
  if (l->pbuf > 1) return fault("param buffer out of range");
  if (static_cast<std::size_t>(l->addr) + l->len > cfg_.pcache_bytes || l->len > kFpeBlockBytes) {
    return fault("LDP reads beyond pCache");
  }
  Pending p;
  p.visible = st_.cycle + 1;
  p.kind = Pending::Kind::pbuf;
  p.index = l->pbuf;
  p.values.assign(kFpeBlockBytes, kFix8Zero);
  for (std::size_t i = 0; i < l->len; ++i) p.values[i] = Fix8::from_bits(pcache_[l->addr + i]);
  pending_.push_back(std::move(p));
}

void FpeSim::exec_data(const DataOp& op) {
  if (const auto* l = std::get_if<LdrOp>(&op)) {
    if (static_cast<std::size_t>(l->dst) + l->len > cfg_.regfile_words) return fault("LDR beyond regfile depth");
    if (l->src == LdrSource::input && (static_cast<std::size_t>(l->src_word) + l->len) * kLanes > cfg_.input_bytes) {
      return fault("LDR reads beyond the input buffer");
    }
    for (std::size_t i = 0; i < l->len; ++i) {
      Pending p;
      p.visible = st_.cycle + 1;
      p.kind = Pending::Kind::regfile;
      p.index = l->dst + i;
      p.values.resize(kLanes);
      for (std::size_t lane = 0; lane < kLanes; ++lane) {
        switch (l->src) {
          case LdrSource::input: p.values[lane] = byte_to_fix8(st_.input[(l->src_word + i) * kLanes + lane]); break;
          case LdrSource::one: p.values[lane] = kFix8One; break;
          default: p.values[lane] = kFix8Zero; break;
        }
      }
      pending_.push_back(std::move(p));
    }
  } else if (const auto* s = std::get_if<StrOp>(&op)) {
    if (static_cast<std::size_t>(s->src) + s->len > cfg_.regfile_words) return fault("STR reads beyond regfile");
    if (static_cast<std::size_t>(s->out_word) + s->len > cfg_.out_words) return fault("STR beyond output buffer");
    for (std::size_t i = 0; i < s->len; ++i) {
      if (pending_write(Pending::Kind::regfile, s->src + i)) ++st_.raw_hazards;
      const Word& w = st_.regfile[s->src + i];
      Pending p;
      p.visible = st_.cycle + 1;
      p.kind = Pending::Kind::out;
      p.index = s->out_word + i;
      p.values.assign(w.begin(), w.end());
      pending_.push_back(std::move(p));
    }
  } else if (std::holds_alternative<GatherOp>(op)) {
    fault("HPE gather on FPE");
  }
}

void FpeSim::step(std::ostream* trace) {
  if (st_.halted) return;
  if (st_.pc >= img_.bundles.size()) {
    fault("ran past the last bundle without FIN");
    return;
  }
  retire(st_.cycle);
  const Bundle& b = img_.bundles[st_.pc];
  exec_compute(b.compute);
  if (!st_.fault) exec_param(b.param);
  if (!st_.fault) exec_data(b.data);
  if (trace) {
    *trace << "cycle=" << st_.cycle << " pc=" << st_.pc << " " << format_bundle(b, Target::fpe);
    if (const auto* m = std::get_if<MvOp>(&b.compute)) {
      *trace << " ; acc" << +m->acc << '=';
      if (m->acc < st_.acc.size()) {
        for (std::size_t j = 0; j < kFpeBlockCols; ++j) *trace << (j ? "," : "") << st_.acc[m->acc][j].raw();
      }
    }
    if (st_.fault) *trace << " ; FAULT " << st_.fault->message;
    *trace << '\n';
  }
  if (st_.fault) return;
  if (st_.halted) {
    st_.cycle += 1 + cfg_.pipeline_depth;
    retire(st_.cycle);
    return;
  }
  ++st_.pc;
  ++st_.cycle;
}

Fix8Vector FpeSim::collect_output() const {
  Fix8Vector v;
  if (auto f = img_.fin()) {
    for (std::size_t i = 0; i < f->cols; ++i) v.elems.push_back(st_.out[i / kLanes][i % kLanes]);
  }
  v.logical_len = v.elems.size();
  return v;
}

FpeResult FpeSim::run_inference(std::span<const std::uint8_t> input, std::ostream* trace) {
  begin(input);
  // Bounded: a straight-line program halts within bundles + 1 steps.
  while (!st_.halted) step(trace);
  FpeResult r;
  r.cycles = st_.cycle;
  r.raw_hazards = st_.raw_hazards;
  r.fault = st_.fault;
  if (!r.fault) r.output = collect_output();
  return r;
}

std::size_t argmax(const Fix8Vector& v) {
  if (v.size() == 0) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace kscope
