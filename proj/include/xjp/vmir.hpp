#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xjp/cfg.hpp"
#include "xjp/isa.hpp"

// VMIR: the RISC-like intermediate set native instructions are translated
// into. Translation is table-driven: a line-oriented rule file maps
// (opcode, operand shape, width) to a parameterized VMIR template.

namespace xjp {

enum class VOp : uint8_t {
  VLIMM, VLOADR, VSTORER, VLOADM, VSTOREM, VEA,
  VADD, VADC, VSUB, VSBB, VAND, VOR, VXOR, VNOT, VNEG,
  VSHL, VSHR, VSAR, VROL, VROR,
  VMULU, VMULS, VDIVU, VDIVS,
  VMOVX, VSELECT, VPUSH, VPOP,
  VJMP, VJCC, VCALL, VRET, VBT, VBSWAP,
  VTHROW, VNATIVE, VEXIT, VNOP,
};

constexpr int kVOpCount = 38;

inline const char* vop_name(VOp op) {
  static const char* names[kVOpCount] = {
      "VLIMM", "VLOADR", "VSTORER", "VLOADM", "VSTOREM", "VEA",
      "VADD", "VADC", "VSUB", "VSBB", "VAND", "VOR", "VXOR", "VNOT", "VNEG",
      "VSHL", "VSHR", "VSAR", "VROL", "VROR",
      "VMULU", "VMULS", "VDIVU", "VDIVS",
      "VMOVX", "VSELECT", "VPUSH", "VPOP",
      "VJMP", "VJCC", "VCALL", "VRET", "VBT", "VBSWAP",
      "VTHROW", "VNATIVE", "VEXIT", "VNOP"};
  return names[static_cast<int>(op)];
}

// VMOVX modes
enum : int64_t {
  kMovxZx8 = 0, kMovxZx32 = 1, kMovxSx8 = 2, kMovxSx32 = 3,
  kMovxSignFill32 = 4, kMovxSignFill64 = 5,
};

// VEXIT modes
enum : int64_t {
  kExitRedirect = 1,   // tail call to immediate native target
  kExitBarrier = 2,    // INT3 reached
  kExitIndirectLocal = 3,  // jump-table dispatch: native target in a vreg
};

// VTHROW modes
enum : int64_t { kThrowNew = 0, kThrowRethrow = 1 };

struct VmirOperand {
  enum class Kind : uint8_t { VReg, Guest, Imm, Label, Mem };
  Kind kind = Kind::Imm;
  uint8_t idx = 0;      // vreg number / guest register id / label id
  int64_t imm = 0;
  MemForm mem{};

  static VmirOperand vreg(uint8_t v) { return {Kind::VReg, v, 0, {}}; }
  static VmirOperand guest(uint8_t r) { return {Kind::Guest, r, 0, {}}; }
  static VmirOperand immediate(int64_t v) { return {Kind::Imm, 0, v, {}}; }
  static VmirOperand label(uint32_t id) {
    VmirOperand o{Kind::Label, 0, int64_t(id), {}};
    return o;
  }
  static VmirOperand memform(MemForm m) { return {Kind::Mem, 0, 0, m}; }
};

struct VmirInst {
  VOp op = VOp::VNOP;
  uint8_t width = 64;
  std::vector<VmirOperand> operands;
  std::vector<uint8_t> native_bytes;  // VNATIVE only
};

struct VmirLabel {
  uint64_t source_pc = 0;
  uint32_t block = 0;
  uint32_t offset = 0;  // instruction index within the block
};

struct VmirBlock {
  uint64_t source_start_pc = 0;
  std::vector<VmirInst> insts;
};

struct VmirFunction {
  uint64_t function_id = 0;
  FunctionRange range;
  std::vector<VmirBlock> blocks;
  std::vector<VmirLabel> labels;  // label id -> position

  std::optional<uint32_t> label_for_pc(uint64_t pc) const {
    for (uint32_t i = 0; i < labels.size(); ++i)
      if (labels[i].source_pc == pc) return i;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Rule table

struct RuleKey {
  Op opcode;
  std::string shape;
  uint8_t width;

  bool operator<(const RuleKey& o) const {
    if (opcode != o.opcode) return opcode < o.opcode;
    if (shape != o.shape) return shape < o.shape;
    return width < o.width;
  }
};

struct TemplateArg {
  enum class Kind : uint8_t { VReg, Guest, Literal, Dst, Src, Imm, Cc };
  Kind kind;
  uint8_t idx = 0;
  int64_t lit = 0;
};

struct TemplateInst {
  VOp op;
  uint8_t width_override = 0;  // 0 = instruction width
  std::vector<TemplateArg> args;
};

struct TranslationRule {
  bool fallback = false;
  std::vector<TemplateInst> insts;
};

class RuleTable {
public:
  const TranslationRule* find(const RuleKey& k) const {
    auto it = rules_.find(k);
    return it == rules_.end() ? nullptr : &it->second;
  }

  void insert(RuleKey k, TranslationRule r) { rules_[std::move(k)] = std::move(r); }

  size_t size() const { return rules_.size(); }

  // Parses the rule-file text. On failure returns a diagnostic message.
  static std::optional<std::string> parse(const std::string& text, RuleTable& out);

  // The embedded default table; validated for totality at first use.
  static const RuleTable& defaults();

  // Checks that every (opcode, shape, width) in the supported set has a rule
  // or an explicit fallback marker. Returns a diagnostic for the first gap.
  std::optional<std::string> check_totality() const;

private:
  std::map<RuleKey, TranslationRule> rules_;
};

namespace detail {

inline std::optional<Op> op_by_name(const std::string& s) {
  std::string lower = s;
  for (char& c : lower) c = char(tolower(uint8_t(c)));
  for (int i = 0; i < kOpCount; ++i)
    if (lower == op_name(Op(i))) return Op(i);
  return std::nullopt;
}

inline std::optional<VOp> vop_by_name(const std::string& s) {
  for (int i = 0; i < kVOpCount; ++i)
    if (s == vop_name(VOp(i))) return VOp(i);
  return std::nullopt;
}

inline std::optional<uint8_t> guest_by_name(const std::string& s) {
  for (uint8_t i = 0; i < 16; ++i)
    if (s == reg_name(i)) return i;
  return std::nullopt;
}

// Legal (shape, width) pairs per opcode; the totality domain. Control
// transfers (CALL/RET/JMP/JCC/INT3) are lowered structurally and have no
// rules.
inline std::vector<RuleKey> supported_rule_keys() {
  std::vector<RuleKey> keys;
  auto add = [&](Op op, std::initializer_list<const char*> shapes,
                 std::initializer_list<int> widths) {
    for (const char* sh : shapes)
      for (int w : widths) keys.push_back({op, sh, uint8_t(w)});
  };
  add(Op::MOV, {"rr", "ri", "rm", "mr", "mi"}, {8, 32, 64});
  add(Op::MOVZX, {"rr8", "rm8"}, {32, 64});
  add(Op::MOVSX, {"rr8", "rm8"}, {32, 64});
  add(Op::MOVSX, {"rr32", "rm32"}, {64});
  add(Op::LEA, {"rm"}, {32, 64});
  add(Op::XCHG, {"rr", "rm", "mr"}, {8, 32, 64});
  for (Op op : {Op::ADD, Op::ADC, Op::SUB, Op::SBB, Op::CMP, Op::TEST,
                Op::AND, Op::OR, Op::XOR})
    add(op, {"rr", "ri", "rm", "mr", "mi"}, {8, 32, 64});
  for (Op op : {Op::NOT, Op::NEG, Op::INC, Op::DEC})
    add(op, {"r", "m"}, {8, 32, 64});
  for (Op op : {Op::SHL, Op::SHR, Op::SAR, Op::ROL, Op::ROR})
    add(op, {"ri", "rc", "mi", "mc"}, {8, 32, 64});
  add(Op::IMUL, {"rr", "rm"}, {32, 64});
  for (Op op : {Op::IMUL, Op::MUL, Op::DIV, Op::IDIV})
    add(op, {"r", "m"}, {8, 32, 64});
  add(Op::CDQ, {"n"}, {32});
  add(Op::CQO, {"n"}, {64});
  add(Op::PUSH, {"r", "i", "m"}, {64});
  add(Op::POP, {"r", "m"}, {64});
  add(Op::SETCC, {"r", "m"}, {8});
  add(Op::CMOVCC, {"rr", "rm"}, {32, 64});
  add(Op::NOP, {"n"}, {64});
  add(Op::LEAVE, {"n"}, {64});
  add(Op::BSWAP, {"r"}, {32, 64});
  add(Op::BT, {"rr", "ri", "mr", "mi"}, {32, 64});
  return keys;
}

}  // namespace detail

// Shape signature of a decoded instruction, matching the rule-file keys.
inline std::string operand_shape(const Instruction& in) {
  auto ch = [](const Operand& o) {
    return o.is_reg() ? 'r' : o.is_mem() ? 'm' : 'i';
  };
  if (in.opcode == Op::MOVZX || in.opcode == Op::MOVSX) {
    std::string s = "r";
    s += ch(in.operands[1]);
    s += std::to_string(in.src_width);
    return s;
  }
  switch (in.operands.size()) {
    case 0: return "n";
    case 1: return std::string(1, ch(in.operands[0]));
    default: {
      std::string s(1, ch(in.operands[0]));
      const Operand& b = in.operands[1];
      // shift-by-CL uses its own shape
      bool shift = in.opcode == Op::SHL || in.opcode == Op::SHR ||
                   in.opcode == Op::SAR || in.opcode == Op::ROL ||
                   in.opcode == Op::ROR;
      if (shift && b.is_reg()) s += 'c';
      else s += ch(b);
      return s;
    }
  }
}

inline std::optional<std::string> RuleTable::parse(const std::string& text,
                                                   RuleTable& out) {
  using namespace detail;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto err = [&](const std::string& m) {
    return "rules line " + std::to_string(lineno) + ": " + m;
  };
  while (std::getline(in, line)) {
    ++lineno;
    size_t h = line.find('#');
    if (h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string kw;
    if (!(ls >> kw)) continue;
    bool fallback = kw == "FALLBACK";
    if (!fallback && kw != "RULE") return err("expected RULE or FALLBACK");
    std::string key;
    if (!(ls >> key)) return err("missing key");
    size_t d1 = key.find('.');
    size_t d2 = key.rfind('.');
    if (d1 == std::string::npos || d2 == d1) return err("key needs opcode.shape.width");
    std::string opname = key.substr(0, d1);
    std::string shape = key.substr(d1 + 1, d2 - d1 - 1);
    std::string widthstr = key.substr(d2 + 1);
    auto op = op_by_name(opname);
    if (!op) return err("unknown opcode " + opname);
    std::vector<uint8_t> widths;
    if (widthstr == "*") widths = {8, 32, 64};
    else if (widthstr == "8" || widthstr == "32" || widthstr == "64")
      widths = {uint8_t(std::stoi(widthstr))};
    else return err("bad width " + widthstr);

    TranslationRule rule;
    rule.fallback = fallback;
    if (!fallback) {
      std::string rest;
      std::getline(ls, rest);
      size_t arrow = rest.find("=>");
      if (arrow == std::string::npos) return err("missing =>");
      rest = rest.substr(arrow + 2);
      std::istringstream seq(rest);
      std::string part;
      while (std::getline(seq, part, ';')) {
        std::istringstream ps(part);
        std::string tok;
        if (!(ps >> tok)) continue;
        TemplateInst ti;
        size_t dot = tok.find('.');
        std::string opn = dot == std::string::npos ? tok : tok.substr(0, dot);
        auto vop = vop_by_name(opn);
        if (!vop) return err("unknown VMIR op " + opn);
        ti.op = *vop;
        if (dot != std::string::npos)
          ti.width_override = uint8_t(std::stoi(tok.substr(dot + 1)));
        while (ps >> tok) {
          TemplateArg a{TemplateArg::Kind::Literal, 0, 0};
          if (tok == "$dst") a.kind = TemplateArg::Kind::Dst;
          else if (tok == "$src") a.kind = TemplateArg::Kind::Src;
          else if (tok == "$imm") a.kind = TemplateArg::Kind::Imm;
          else if (tok == "$cc") a.kind = TemplateArg::Kind::Cc;
          else if (tok.size() >= 2 && tok[0] == 'v' && isdigit(tok[1])) {
            a.kind = TemplateArg::Kind::VReg;
            a.idx = uint8_t(std::stoi(tok.substr(1)));
            if (a.idx > 7) return err("vreg out of range");
          } else if (auto g = guest_by_name(tok)) {
            a.kind = TemplateArg::Kind::Guest;
            a.idx = *g;
          } else {
            try {
              a.kind = TemplateArg::Kind::Literal;
              a.lit = std::stoll(tok, nullptr, 0);
            } catch (...) {
              return err("bad template arg " + tok);
            }
          }
          ti.args.push_back(a);
        }
        rule.insts.push_back(std::move(ti));
      }
    }
    for (uint8_t w : widths) out.insert({*op, shape, w}, rule);
  }
  return std::nullopt;
}

inline std::optional<std::string> RuleTable::check_totality() const {
  for (const RuleKey& k : detail::supported_rule_keys()) {
    if (!find(k))
      return "missing rule or FALLBACK for " + std::string(op_name(k.opcode)) +
             "." + k.shape + "." + std::to_string(int(k.width));
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Translation

enum class XlateErr : uint8_t {
  None,
  NoRule,           // recoverable: caller emits VNATIVE
  BadTemplate,
  UnresolvedLabel,
  Unsupported,
};

struct XlateConfig {
  uint64_t throw_entry = 0xE0000000;
  uint64_t rethrow_entry = 0xE0000100;
};

// Expands the matching rule template. NoRule (explicit FALLBACK or absent
// key) signals the caller to route through VNATIVE.
inline XlateErr translate_instruction(const Instruction& in,
                                      const RuleTable& rules,
                                      std::vector<VmirInst>& out) {
  RuleKey key{in.opcode, operand_shape(in), in.width};
  const TranslationRule* rule = rules.find(key);
  if (!rule || rule->fallback) return XlateErr::NoRule;
  for (const TemplateInst& ti : rule->insts) {
    VmirInst vi;
    vi.op = ti.op;
    vi.width = ti.width_override ? ti.width_override : in.width;
    for (const TemplateArg& a : ti.args) {
      switch (a.kind) {
        case TemplateArg::Kind::VReg:
          vi.operands.push_back(VmirOperand::vreg(a.idx));
          break;
        case TemplateArg::Kind::Guest:
          vi.operands.push_back(VmirOperand::guest(a.idx));
          break;
        case TemplateArg::Kind::Literal:
          vi.operands.push_back(VmirOperand::immediate(a.lit));
          break;
        case TemplateArg::Kind::Cc:
          if (in.cc == kNoCond) return XlateErr::BadTemplate;
          vi.operands.push_back(VmirOperand::immediate(in.cc));
          break;
        case TemplateArg::Kind::Imm: {
          const Operand* imm = nullptr;
          for (const Operand& o : in.operands)
            if (o.is_imm()) imm = &o;
          if (!imm) return XlateErr::BadTemplate;
          vi.operands.push_back(VmirOperand::immediate(imm->imm));
          break;
        }
        case TemplateArg::Kind::Dst:
        case TemplateArg::Kind::Src: {
          size_t idx = a.kind == TemplateArg::Kind::Dst ? 0 : 1;
          if (idx >= in.operands.size()) return XlateErr::BadTemplate;
          const Operand& o = in.operands[idx];
          if (o.is_reg()) vi.operands.push_back(VmirOperand::guest(o.reg));
          else if (o.is_mem()) vi.operands.push_back(VmirOperand::memform(o.mem));
          else vi.operands.push_back(VmirOperand::immediate(o.imm));
          break;
        }
      }
    }
    out.push_back(std::move(vi));
  }
  return XlateErr::None;
}

struct XlateResult {
  VmirFunction fn;
  XlateErr err = XlateErr::None;
  uint64_t err_pc = 0;

  bool ok() const { return err == XlateErr::None; }
};

namespace detail {

inline std::vector<uint8_t> reencode_or_raw(const Instruction& in,
                                            const MachineEnv& env, uint64_t pc) {
  std::vector<uint8_t> raw;
  if (env.fetch(pc, in.raw_length, raw).ok() && raw.size() >= in.raw_length) {
    raw.resize(in.raw_length);
    return raw;
  }
  auto enc = encode(in);
  return enc ? *enc : std::vector<uint8_t>{};
}

}  // namespace detail

// Lowers a recovered CFG to VMIR. Calls are expanded inline (VCALL exits the
// VM and re-enters at the return label); block terminators become
// VJMP/VJCC/VRET/VEXIT; calls to the well-known throw entries become VTHROW.
inline XlateResult translate_function(const ControlFlowGraph& cfg,
                                      const RuleTable& rules,
                                      const MachineEnv& env,
                                      const XlateConfig& cfgx = {}) {
  XlateResult res;
  VmirFunction& f = res.fn;
  f.function_id = cfg.range.function_id;
  f.range = cfg.range;

  auto fail = [&](XlateErr e, uint64_t pc) {
    res.err = e;
    res.err_pc = pc;
    return res;
  };

  // Block index by start pc (map order is ascending pc).
  std::map<uint64_t, uint32_t> block_index;
  uint32_t bi = 0;
  for (auto& [pc, bb] : cfg.blocks) block_index[pc] = bi++;
  f.blocks.resize(cfg.blocks.size());

  // Label ids are allocated per source pc, in program order.
  auto ensure_label = [&](uint64_t pc, uint32_t block, uint32_t offset) {
    for (uint32_t i = 0; i < f.labels.size(); ++i)
      if (f.labels[i].source_pc == pc) return i;
    f.labels.push_back({pc, block, offset});
    return uint32_t(f.labels.size() - 1);
  };

  bi = 0;
  for (auto& [bpc, bb] : cfg.blocks) {
    VmirBlock& vb = f.blocks[bi];
    vb.source_start_pc = bpc;

    auto emit_call = [&](const Instruction& in, uint64_t pc) -> bool {
      uint64_t next = pc + in.raw_length;
      BranchInfo b = branch_info(in, pc);
      if (b.kind == BranchInfo::Kind::CallDirect &&
          (b.target == cfgx.throw_entry || b.target == cfgx.rethrow_entry)) {
        VmirInst vt;
        vt.op = VOp::VTHROW;
        vt.width = 64;
        vt.operands = {VmirOperand::immediate(
                           b.target == cfgx.throw_entry ? kThrowNew : kThrowRethrow),
                       VmirOperand::immediate(int64_t(next))};
        vb.insts.push_back(std::move(vt));
        return true;
      }
      // materialize target into v6
      if (b.kind == BranchInfo::Kind::CallDirect) {
        VmirInst li;
        li.op = VOp::VLIMM;
        li.width = 64;
        li.operands = {VmirOperand::vreg(6), VmirOperand::immediate(int64_t(b.target))};
        vb.insts.push_back(std::move(li));
      } else {
        const Operand& t = in.operands[0];
        if (t.is_reg()) {
          VmirInst lr;
          lr.op = VOp::VLOADR;
          lr.width = 64;
          lr.operands = {VmirOperand::vreg(6), VmirOperand::guest(t.reg)};
          vb.insts.push_back(std::move(lr));
        } else {
          VmirInst ea;
          ea.op = VOp::VEA;
          ea.width = 64;
          ea.operands = {VmirOperand::vreg(7), VmirOperand::memform(t.mem)};
          vb.insts.push_back(std::move(ea));
          VmirInst lm;
          lm.op = VOp::VLOADM;
          lm.width = 64;
          lm.operands = {VmirOperand::vreg(6), VmirOperand::vreg(7)};
          vb.insts.push_back(std::move(lm));
        }
      }
      VmirInst vc;
      vc.op = VOp::VCALL;
      vc.width = 64;
      vc.operands = {VmirOperand::vreg(6), VmirOperand::immediate(int64_t(next))};
      vb.insts.push_back(std::move(vc));
      return true;
    };

    for (size_t ii = 0; ii < bb.insts.size(); ++ii) {
      const DecodedInst& di = bb.insts[ii];
      bool is_last = ii + 1 == bb.insts.size();
      ensure_label(di.pc, bi, uint32_t(vb.insts.size()));
      const Instruction& in = di.inst;
      BranchInfo b = branch_info(in, di.pc);
      using K = BranchInfo::Kind;

      if (b.kind == K::CallDirect || b.kind == K::CallIndirect) {
        emit_call(in, di.pc);
        continue;  // non-returning-call terminators simply end here
      }
      if (!is_last || (b.kind == K::Fallthrough)) {
        if (b.kind != K::Fallthrough)
          return fail(XlateErr::Unsupported, di.pc);
        std::vector<VmirInst> seq;
        XlateErr e = translate_instruction(in, rules, seq);
        if (e == XlateErr::NoRule) {
          VmirInst vn;
          vn.op = VOp::VNATIVE;
          vn.width = 64;
          vn.native_bytes = detail::reencode_or_raw(in, env, di.pc);
          if (vn.native_bytes.empty()) return fail(XlateErr::BadTemplate, di.pc);
          vb.insts.push_back(std::move(vn));
        } else if (e != XlateErr::None) {
          return fail(e, di.pc);
        } else {
          for (auto& vi : seq) vb.insts.push_back(std::move(vi));
        }
        continue;
      }

      // Block terminator.
      switch (b.kind) {
        case K::Return: {
          VmirInst vr;
          vr.op = VOp::VRET;
          vr.width = 64;
          int64_t adj = in.operands.empty() ? 0 : in.operands[0].imm;
          vr.operands = {VmirOperand::immediate(adj)};
          vb.insts.push_back(std::move(vr));
          break;
        }
        case K::Barrier: {
          VmirInst ve;
          ve.op = VOp::VEXIT;
          ve.width = 64;
          ve.operands = {VmirOperand::immediate(kExitBarrier),
                         VmirOperand::immediate(int64_t(di.pc))};
          vb.insts.push_back(std::move(ve));
          break;
        }
        case K::DirectJump: {
          if (cfg.range.contains(b.target)) {
            auto tit = block_index.find(b.target);
            if (tit == block_index.end())
              return fail(XlateErr::UnresolvedLabel, di.pc);
            VmirInst vj;
            vj.op = VOp::VJMP;
            vj.width = 64;
            vj.operands = {VmirOperand::label(ensure_label(b.target, tit->second, 0))};
            vb.insts.push_back(std::move(vj));
          } else {
            VmirInst ve;
            ve.op = VOp::VEXIT;
            ve.width = 64;
            ve.operands = {VmirOperand::immediate(kExitRedirect),
                           VmirOperand::immediate(int64_t(b.target))};
            vb.insts.push_back(std::move(ve));
          }
          break;
        }
        case K::ConditionalBranch: {
          if (!cfg.range.contains(b.target))
            return fail(XlateErr::Unsupported, di.pc);  // conditional tail call
          auto tit = block_index.find(b.target);
          auto fit = block_index.find(b.fallthrough);
          if (tit == block_index.end() || fit == block_index.end())
            return fail(XlateErr::UnresolvedLabel, di.pc);
          VmirInst vj;
          vj.op = VOp::VJCC;
          vj.width = 64;
          vj.operands = {VmirOperand::immediate(in.cc),
                         VmirOperand::label(ensure_label(b.target, tit->second, 0)),
                         VmirOperand::label(
                             ensure_label(b.fallthrough, fit->second, 0))};
          vb.insts.push_back(std::move(vj));
          break;
        }
        case K::IndirectJump: {
          // jump table: compute the native target, dispatch via label map
          const Operand& t = in.operands[0];
          VmirInst ea;
          ea.op = VOp::VEA;
          ea.width = 64;
          ea.operands = {VmirOperand::vreg(7), VmirOperand::memform(t.mem)};
          vb.insts.push_back(std::move(ea));
          VmirInst lm;
          lm.op = VOp::VLOADM;
          lm.width = 64;
          lm.operands = {VmirOperand::vreg(6), VmirOperand::vreg(7)};
          vb.insts.push_back(std::move(lm));
          VmirInst ve;
          ve.op = VOp::VEXIT;
          ve.width = 64;
          ve.operands = {VmirOperand::immediate(kExitIndirectLocal),
                         VmirOperand::vreg(6)};
          vb.insts.push_back(std::move(ve));
          break;
        }
        default:
          return fail(XlateErr::Unsupported, di.pc);
      }
    }

    // Blocks without an explicit terminator fall through to their successor.
    if (!bb.successors.empty() &&
        bb.terminator.kind == BranchInfo::Kind::Fallthrough &&
        (vb.insts.empty() || (vb.insts.back().op != VOp::VJMP &&
                              vb.insts.back().op != VOp::VJCC &&
                              vb.insts.back().op != VOp::VRET &&
                              vb.insts.back().op != VOp::VEXIT))) {
      uint64_t succ = bb.successors[0];
      auto sit = block_index.find(succ);
      if (sit == block_index.end()) return fail(XlateErr::UnresolvedLabel, succ);
      VmirInst vj;
      vj.op = VOp::VJMP;
      vj.width = 64;
      vj.operands = {VmirOperand::label(ensure_label(succ, sit->second, 0))};
      f.blocks[bi].insts.push_back(std::move(vj));
    }
    ++bi;
  }

  // Resolve label positions recorded before their blocks were emitted
  // (forward branch targets always point at block offset 0, already correct).
  for (auto& l : f.labels) {
    (void)l;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Pass interface

using VmirPass = std::function<VmirFunction(const VmirFunction&)>;

inline std::optional<std::string> validate_vmir(const VmirFunction& f) {
  for (const VmirBlock& b : f.blocks) {
    for (const VmirInst& vi : b.insts) {
      for (const VmirOperand& o : vi.operands) {
        if (o.kind == VmirOperand::Kind::Label) {
          if (uint64_t(o.imm) >= f.labels.size()) return "dangling label reference";
          if (vi.op != VOp::VJMP && vi.op != VOp::VJCC && vi.op != VOp::VCALL)
            return "label operand outside VJMP/VJCC/VCALL";
        }
        if (o.kind == VmirOperand::Kind::VReg && o.idx > 7)
          return "vreg out of range";
      }
    }
  }
  for (const VmirLabel& l : f.labels) {
    if (l.block >= f.blocks.size()) return "label block out of range";
    if (l.offset > f.blocks[l.block].insts.size()) return "label offset out of range";
  }
  return std::nullopt;
}

inline VmirPass identity_pass() {
  return [](const VmirFunction& f) { return f; };
}

// Renumbers labels into (block, offset) order and rewrites references;
// idempotent after the first application.
inline VmirPass label_renumber_pass() {
  return [](const VmirFunction& f) {
    VmirFunction out = f;
    std::vector<uint32_t> order(f.labels.size());
    for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      const VmirLabel& la = f.labels[a];
      const VmirLabel& lb = f.labels[b];
      if (la.block != lb.block) return la.block < lb.block;
      if (la.offset != lb.offset) return la.offset < lb.offset;
      return la.source_pc < lb.source_pc;
    });
    std::vector<uint32_t> remap(f.labels.size());
    for (uint32_t newid = 0; newid < order.size(); ++newid)
      remap[order[newid]] = newid;
    out.labels.clear();
    out.labels.resize(f.labels.size());
    for (uint32_t i = 0; i < f.labels.size(); ++i)
      out.labels[remap[i]] = f.labels[i];
    for (VmirBlock& b : out.blocks)
      for (VmirInst& vi : b.insts)
        for (VmirOperand& o : vi.operands)
          if (o.kind == VmirOperand::Kind::Label)
            o.imm = int64_t(remap[uint32_t(o.imm)]);
    return out;
  };
}

struct PassResult {
  VmirFunction fn;
  bool ok = true;
  std::string violation;
};

inline PassResult run_passes(const VmirFunction& f,
                             const std::vector<VmirPass>& passes) {
  PassResult r;
  r.fn = f;
  for (const VmirPass& p : passes) {
    VmirFunction next = p(r.fn);
    if (auto v = validate_vmir(next)) {
      r.ok = false;
      r.violation = *v;
      return r;
    }
    r.fn = std::move(next);
  }
  return r;
}

}  // namespace xjp

#include "xjp/rules_default.hpp"
