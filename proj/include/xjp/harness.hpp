#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xjp/process.hpp"

// Differential test harness: instruction-level case generation over the full
// opcode table, program-level case generation (branches, bounded loops, jump
// tables, global checksum), and oracle-vs-protected comparison.

namespace xjp {

constexpr uint64_t kCaseCodeAddr = 0x40000;

// Initial RSP leaves 0x8000+ mapped bytes above for shadow-code excursions
// (the dispatcher walks RSP upward while applying decoy codes) and the rest
// of the stack region below for calls and destructor thunks.
constexpr uint64_t kInitialRsp = kStackEnd - 0x9000;

inline const std::vector<uint64_t>& boundary_immediates() {
  static const std::vector<uint64_t> v = {
      0x00, 0x01, 0x7F, 0x80, 0xFF, 0x7FFF, 0x8000, 0x7FFFFFFF,
      0x80000000, 0xFFFFFFFF, 0x8000000000000000ull, 0xFFFFFFFFFFFFFFFFull};
  return v;
}

// A self-contained mini-program: code image, initial state, seeded memory.
struct CaseProgram {
  std::vector<uint8_t> code;
  uint64_t code_len = 0;  // function range length (excludes trailing data)
  uint64_t addr = kCaseCodeAddr;
  uint64_t fid = 1;
  MachineState init;
  std::vector<std::pair<uint64_t, uint64_t>> mem_init;  // (addr, qword)
  Op opcode = Op::NOP;  // the case opcode for instruction-level cases
  bool mask_af = false;
  bool has_jump_table = false;
};

// ---------------------------------------------------------------------------
// Instruction-level generation

struct IsaTemplate {
  Op op;
  std::string shape;
  uint8_t width;
};

inline const std::vector<IsaTemplate>& isa_templates() {
  static const std::vector<IsaTemplate> tpls = [] {
    std::vector<IsaTemplate> t;
    for (const RuleKey& k : detail::supported_rule_keys()) {
      if (k.opcode == Op::TEST && k.shape == "rm") continue;  // no encoding
      t.push_back({k.opcode, k.shape, k.width});
    }
    t.push_back({Op::JMP, "i", 64});
    t.push_back({Op::JCC, "i", 64});
    t.push_back({Op::CALL, "i", 64});
    t.push_back({Op::CALL, "r", 64});
    t.push_back({Op::CALL, "m", 64});
    t.push_back({Op::RET, "n", 64});
    t.push_back({Op::INT3, "n", 64});
    return t;
  }();
  return tpls;
}

namespace detail {

inline bool is_shift(Op op) {
  return op == Op::SHL || op == Op::SHR || op == Op::SAR || op == Op::ROL ||
         op == Op::ROR;
}

}  // namespace detail

inline CaseProgram gen_isa_case(uint64_t seed, uint64_t index) {
  const auto& tpls = isa_templates();
  const IsaTemplate& t = tpls[index % tpls.size()];
  Rng rng(sub_seed(seed, "isa", index));

  CaseProgram cp;
  cp.opcode = t.op;
  cp.mask_af = !af_defined(t.op);
  for (int r = 0; r < 16; ++r) cp.init.gpr[r] = rng.next();
  cp.init.gpr[RSP] = kInitialRsp;
  cp.init.fl.cf = rng.below(2);
  cp.init.fl.pf = rng.below(2);
  cp.init.fl.af = rng.below(2);
  cp.init.fl.zf = rng.below(2);
  cp.init.fl.sf = rng.below(2);
  cp.init.fl.of = rng.below(2);

  auto pick_gpr = [&] {
    for (;;) {
      uint8_t r = uint8_t(rng.below(16));
      if (r != RSP) return r;
    }
  };

  // Memory operand resolving into scratch; seeds the target bytes.
  auto gen_mem = [&]() -> MemForm {
    MemForm m;
    uint64_t ea = kScratchBase + 8 * rng.range(4, 0x1FD0);
    if (index % 17 == 0) {
      // the canonical base+index*8+disp shape
      m.base = RBX;
      m.index = RCX;
      m.scale = 8;
      m.disp = 0x1000;
      cp.init.gpr[RCX] = rng.below(8);
      cp.init.gpr[RBX] = ea - 0x1000 - cp.init.gpr[RCX] * 8;
    } else {
      switch (rng.below(3)) {
        case 0: {
          m.base = int8_t(pick_gpr());
          cp.init.gpr[m.base] = ea;
          break;
        }
        case 1: {
          m.base = int8_t(pick_gpr());
          m.disp = int32_t(rng.range(0, 0x200)) - 0x100;
          cp.init.gpr[m.base] = ea - uint64_t(int64_t(m.disp));
          break;
        }
        default: {
          m.base = int8_t(pick_gpr());
          uint8_t idx = pick_gpr();
          while (idx == uint8_t(m.base)) idx = pick_gpr();
          m.index = int8_t(idx);
          m.scale = uint8_t(1u << rng.below(4));
          m.disp = int32_t(rng.range(0, 0x100)) - 0x80;
          cp.init.gpr[m.index] = rng.below(32);
          cp.init.gpr[m.base] =
              ea - cp.init.gpr[m.index] * m.scale - uint64_t(int64_t(m.disp));
          break;
        }
      }
    }
    cp.mem_init.push_back({ea, rng.next()});
    cp.mem_init.push_back({ea + 8, rng.next()});
    return m;
  };

  auto gen_imm = [&](uint8_t w, bool full64) -> int64_t {
    const auto& B = boundary_immediates();
    size_t k = rng.below(B.size() + 4);
    uint64_t v = k < B.size() ? B[k] : rng.next();
    if (w == 8) return int64_t(int8_t(v));
    if (w == 32) return int64_t(int32_t(v));
    return full64 ? int64_t(v) : int64_t(int32_t(v));
  };

  Instruction in;
  in.opcode = t.op;
  in.width = t.width;
  const std::string& sh = t.shape;

  if (t.op == Op::MOVZX || t.op == Op::MOVSX) {
    in.src_width = sh.size() > 2 && sh[2] == '3' ? 32 : 8;
    Operand src = sh[1] == 'r' ? Operand::make_reg(pick_gpr())
                               : Operand::make_mem(gen_mem());
    in.operands = {Operand::make_reg(pick_gpr()), src};
  } else if (sh == "rr") {
    in.operands = {Operand::make_reg(pick_gpr()), Operand::make_reg(pick_gpr())};
  } else if (sh == "ri") {
    int64_t imm;
    if (detail::is_shift(t.op)) {
      static const int64_t counts[] = {0, 1, 7, 8, 31, 32, 63, 64, 255};
      imm = counts[rng.below(9)];
    } else if (t.op == Op::BT) {
      static const int64_t bits[] = {0, 1, 31, 32, 63, 100};
      imm = bits[rng.below(6)];
    } else {
      imm = gen_imm(t.width, t.op == Op::MOV && t.width == 64);
    }
    in.operands = {Operand::make_reg(pick_gpr()), Operand::make_imm(imm)};
  } else if (sh == "rm") {
    in.operands = {Operand::make_reg(pick_gpr()), Operand::make_mem(gen_mem())};
  } else if (sh == "mr") {
    in.operands = {Operand::make_mem(gen_mem()), Operand::make_reg(pick_gpr())};
  } else if (sh == "mi") {
    int64_t imm = detail::is_shift(t.op)   ? int64_t(rng.below(70))
                  : t.op == Op::BT         ? int64_t(rng.below(64))
                                           : gen_imm(t.width, false);
    in.operands = {Operand::make_mem(gen_mem()), Operand::make_imm(imm)};
  } else if (sh == "rc") {
    cp.init.gpr[RCX] = rng.below(300);
    in.operands = {Operand::make_reg(pick_gpr()), Operand::make_reg(RCX)};
  } else if (sh == "mc") {
    in.operands = {Operand::make_mem(gen_mem()), Operand::make_reg(RCX)};
    cp.init.gpr[RCX] = rng.below(300);
  } else if (sh == "r") {
    in.operands = {Operand::make_reg(pick_gpr())};
  } else if (sh == "m") {
    in.operands = {Operand::make_mem(gen_mem())};
  } else if (sh == "i") {
    in.operands = {Operand::make_imm(gen_imm(64, false))};
  }
  if (t.op == Op::JCC || t.op == Op::SETCC || t.op == Op::CMOVCC)
    in.cc = uint8_t(rng.below(16));

  auto app = [&](const Instruction& i) {
    auto e = encode(i);
    if (!e) throw std::runtime_error("unencodable case template");
    cp.code.insert(cp.code.end(), e->begin(), e->end());
  };
  auto ret = [&] { cp.code.push_back(0xC3); };

  switch (t.op) {
    case Op::JMP:
    case Op::JCC: {
      // skip over a visible side effect so taken and not-taken differ
      Instruction mark;
      mark.opcode = Op::MOV;
      mark.width = 32;
      mark.operands = {Operand::make_reg(R10), Operand::make_imm(0x5A5A5A5A)};
      auto mb = encode(mark);
      in.operands = {Operand::make_imm(int64_t(mb->size()))};
      app(in);
      cp.code.insert(cp.code.end(), mb->begin(), mb->end());
      ret();
      break;
    }
    case Op::CALL: {
      if (sh == "i") {
        in.operands = {Operand::make_imm(1)};
        app(in);
      } else {
        size_t before = cp.code.size();
        app(in);
        uint64_t callee = cp.addr + cp.code.size() + 1;
        if (sh == "r") {
          cp.init.gpr[in.operands[0].reg] = callee;
        } else {
          // overwrite the seeded qword at the operand's address
          cp.mem_init[cp.mem_init.size() - 2].second = callee;
        }
        (void)before;
      }
      ret();  // return site
      ret();  // callee body
      break;
    }
    case Op::RET:
      ret();
      break;
    case Op::INT3:
      cp.code.push_back(0xCC);
      break;
    case Op::PUSH: {
      app(in);
      Instruction pop;
      pop.opcode = Op::POP;
      pop.width = 64;
      pop.operands = {Operand::make_reg(R11)};
      app(pop);
      ret();
      break;
    }
    case Op::POP: {
      Instruction push;
      push.opcode = Op::PUSH;
      push.width = 64;
      push.operands = {Operand::make_reg(RCX)};
      app(push);
      app(in);
      ret();
      break;
    }
    case Op::LEAVE: {
      cp.init.gpr[RBP] = kInitialRsp - 16;
      cp.mem_init.push_back({kInitialRsp - 16, rng.next()});
      app(in);
      ret();
      break;
    }
    default:
      app(in);
      ret();
      break;
  }
  cp.code_len = cp.code.size();
  return cp;
}

// ---------------------------------------------------------------------------
// Program-level generation

namespace detail {

// Tiny fixup assembler for generated programs. Branches are emitted with
// placeholder displacements and patched once all labels are placed.
struct MiniAsm {
  uint64_t base;
  std::vector<uint8_t> bytes;

  enum FixKind : uint8_t { Rel32, Abs32, Abs64 };
  struct Fix {
    size_t pos;
    int label;
    FixKind kind;
  };
  std::vector<Fix> fixes;
  std::map<int, uint64_t> labels;
  int nlab = 0;

  int new_label() { return nlab++; }
  void place(int l) { labels[l] = base + bytes.size(); }
  uint64_t pc() const { return base + bytes.size(); }

  void inst(const Instruction& i) {
    auto e = encode(i);
    if (!e) throw std::runtime_error("unencodable generated instruction");
    bytes.insert(bytes.end(), e->begin(), e->end());
  }
  void hole(int label, FixKind kind, int size) {
    fixes.push_back({bytes.size(), label, kind});
    bytes.insert(bytes.end(), size_t(size), 0);
  }
  void jmp(int l) {
    bytes.push_back(0xE9);
    hole(l, Rel32, 4);
  }
  void jcc(uint8_t cc, int l) {
    bytes.push_back(0x0F);
    bytes.push_back(uint8_t(0x80 + cc));
    hole(l, Rel32, 4);
  }
  // JMP [rax*8 + table]
  void jmp_table(int table_label) {
    bytes.push_back(0xFF);
    bytes.push_back(0x24);
    bytes.push_back(0xC5);
    hole(table_label, Abs32, 4);
  }
  void entry64(int l) { hole(l, Abs64, 8); }

  void fixup() {
    for (const Fix& f : fixes) {
      uint64_t target = labels.at(f.label);
      uint64_t v = f.kind == Rel32 ? target - (base + f.pos + 4) : target;
      int n = f.kind == Abs64 ? 8 : 4;
      for (int i = 0; i < n; ++i) bytes[f.pos + i] = uint8_t(v >> (8 * i));
    }
  }
};

}  // namespace detail

constexpr uint64_t kGlobalSlotBase = 0x10F00;
constexpr int kGlobalSlotCount = 8;

inline CaseProgram gen_program_case(uint64_t seed, uint64_t index) {
  Rng rng(sub_seed(seed, "prog", index));
  CaseProgram cp;
  cp.mask_af = false;
  for (int r = 0; r < 16; ++r) cp.init.gpr[r] = rng.next();
  cp.init.gpr[RSP] = kInitialRsp;

  detail::MiniAsm a{kCaseCodeAddr};
  static const uint8_t work[] = {RAX, RBX, RCX, RDX, RSI, RDI,
                                 R8,  R9,  R10, R11};
  auto wreg = [&] { return work[rng.below(10)]; };
  auto slot_mem = [&](int g) {
    MemForm m;
    m.disp = int32_t(kGlobalSlotBase + 8 * g);
    return Operand::make_mem(m);
  };
  auto mov_ri = [&](uint8_t r, int64_t v) {
    Instruction i;
    i.opcode = Op::MOV;
    i.width = 64;
    i.operands = {Operand::make_reg(r), Operand::make_imm(v)};
    a.inst(i);
  };
  auto rr = [&](Op op, uint8_t d, uint8_t s, uint8_t w = 64) {
    Instruction i;
    i.opcode = op;
    i.width = w;
    i.operands = {Operand::make_reg(d), Operand::make_reg(s)};
    a.inst(i);
  };
  auto ri = [&](Op op, uint8_t d, int64_t v, uint8_t w = 64) {
    Instruction i;
    i.opcode = op;
    i.width = w;
    i.operands = {Operand::make_reg(d), Operand::make_imm(v)};
    a.inst(i);
  };

  auto emit_op = [&] {
    uint8_t r1 = wreg(), r2 = wreg();
    switch (rng.below(14)) {
      case 0: rr(Op::ADD, r1, r2); break;
      case 1: rr(Op::SUB, r1, r2); break;
      case 2: rr(Op::XOR, r1, r2); break;
      case 3: rr(Op::AND, r1, r2); break;
      case 4: rr(Op::OR, r1, r2); break;
      case 5: rr(Op::IMUL, r1, r2); break;
      case 6: mov_ri(r1, int64_t(int32_t(rng.next()))); break;
      case 7: ri(Op::SHL, r1, int64_t(rng.below(32))); break;
      case 8: ri(Op::SHR, r1, int64_t(rng.below(32))); break;
      case 9: {  // load a global
        Instruction i;
        i.opcode = Op::MOV;
        i.width = 64;
        i.operands = {Operand::make_reg(r1), slot_mem(int(rng.below(8)))};
        a.inst(i);
        break;
      }
      case 10: {  // store a global
        Instruction i;
        i.opcode = Op::MOV;
        i.width = 64;
        i.operands = {slot_mem(int(rng.below(8))), Operand::make_reg(r1)};
        a.inst(i);
        break;
      }
      case 11: {
        Instruction i;
        i.opcode = Op::BSWAP;
        i.width = 64;
        i.operands = {Operand::make_reg(r1)};
        a.inst(i);
        break;
      }
      case 12: {
        Instruction i;
        i.opcode = Op::CMOVCC;
        i.width = 64;
        i.cc = uint8_t(rng.below(16));
        i.operands = {Operand::make_reg(r1), Operand::make_reg(r2)};
        a.inst(i);
        break;
      }
      default: {  // guarded unsigned division
        uint8_t d = work[2 + rng.below(4)];  // RCX/RDX/RSI/RDI
        if (d == RDX) d = RSI;
        mov_ri(RDX, 0);
        ri(Op::OR, d, 1);
        Instruction i;
        i.opcode = Op::DIV;
        i.width = 64;
        i.operands = {Operand::make_reg(d)};
        a.inst(i);
        break;
      }
    }
  };
  auto emit_ops = [&](int n) {
    for (int i = 0; i < n; ++i) emit_op();
  };

  // init: seed the globals
  for (int g = 0; g < kGlobalSlotCount; ++g) {
    mov_ri(RAX, int64_t(int32_t(rng.next())));
    Instruction st;
    st.opcode = Op::MOV;
    st.width = 64;
    st.operands = {slot_mem(g), Operand::make_reg(RAX)};
    a.inst(st);
  }

  struct Table {
    int label;
    std::vector<int> targets;
  };
  std::vector<Table> tables;

  int target_blocks = 5 + int(rng.below(36));  // 5..40
  int blocks = 1;
  bool force_table = index % 10 == 0;

  while (target_blocks - blocks >= 2) {
    int budget = target_blocks - blocks;
    int kind;
    if (force_table && budget >= 5) {
      kind = 3;
      force_table = false;
    } else {
      kind = int(rng.below(8));
      if (kind >= 4) kind = rng.below(2) ? 0 : 1;  // bias to diamonds/loops
      if (kind == 2 && budget < 3) kind = 1;
      if (kind == 3 && budget < 5) kind = 2;
      if (kind == 2 && budget < 3) kind = 1;
    }
    switch (kind) {
      case 0:  // straight filler, same block
        emit_ops(int(rng.range(2, 6)));
        break;
      case 1: {  // counted loop
        mov_ri(R15, int64_t(rng.range(2, 6)));
        int L = a.new_label();
        a.place(L);
        emit_ops(int(rng.range(1, 4)));
        Instruction dec;
        dec.opcode = Op::DEC;
        dec.width = 64;
        dec.operands = {Operand::make_reg(R15)};
        a.inst(dec);
        a.jcc(5, L);  // JNZ
        blocks += 2;
        break;
      }
      case 2: {  // diamond
        uint8_t r = wreg();
        Instruction tst;
        tst.opcode = Op::TEST;
        tst.width = 64;
        tst.operands = {Operand::make_reg(r), Operand::make_reg(r)};
        a.inst(tst);
        int T = a.new_label(), J = a.new_label();
        a.jcc(uint8_t(rng.below(16)), T);
        emit_ops(int(rng.range(1, 4)));
        a.jmp(J);
        a.place(T);
        emit_ops(int(rng.range(1, 4)));
        a.place(J);
        blocks += 3;
        break;
      }
      default: {  // jump table
        int n = 4;
        Table tbl;
        tbl.label = a.new_label();
        int J = a.new_label();
        rr(Op::MOV, RAX, wreg());
        ri(Op::AND, RAX, n - 1);
        a.jmp_table(tbl.label);
        for (int i = 0; i < n; ++i) {
          int L = a.new_label();
          tbl.targets.push_back(L);
          a.place(L);
          emit_ops(int(rng.range(1, 3)));
          a.jmp(J);
        }
        a.place(J);
        tables.push_back(std::move(tbl));
        cp.has_jump_table = true;
        blocks += n + 1;
        break;
      }
    }
  }

  // checksum epilogue
  mov_ri(RAX, 0);
  for (int g = 0; g < kGlobalSlotCount; ++g) {
    Instruction add;
    add.opcode = Op::ADD;
    add.width = 64;
    add.operands = {Operand::make_reg(RAX), slot_mem(g)};
    a.inst(add);
  }
  Instruction st;
  st.opcode = Op::MOV;
  st.width = 64;
  MemForm cm;
  cm.disp = int32_t(kChecksumAddr);
  st.operands = {Operand::make_mem(cm), Operand::make_reg(RAX)};
  a.inst(st);
  a.bytes.push_back(0xC3);

  size_t code_end = a.bytes.size();

  // table data after the code, zero-sentinel terminated
  for (const Table& t : tables) {
    a.place(t.label);
    for (int l : t.targets) a.entry64(l);
    for (int i = 0; i < 8; ++i) a.bytes.push_back(0);
  }
  a.fixup();

  cp.code = std::move(a.bytes);
  cp.code_len = code_end;
  return cp;
}

// ---------------------------------------------------------------------------
// Differential check

struct DiffVerdict {
  bool pass = true;
  std::string detail;
  RunStats stats;  // protected-side statistics
};

inline void setup_case_env(MachineEnv& env, const CaseProgram& cp) {
  env.map_region(kScratchBase, kScratchEnd - kScratchBase);
  env.map_region(kStackBase, kStackEnd - kStackBase);
  env.load_image(cp.fid, cp.addr, cp.code);
  for (auto [addr, v] : cp.mem_init) env.write(addr, 8, v);
}

struct CaseModule {
  ProtectedModule mod;
  std::string err;  // empty on success

  bool ok() const { return err.empty(); }
};

inline CaseModule build_case_module(const MachineEnv& env, const CaseProgram& cp,
                                    const RuleTable& rules, uint64_t seed) {
  CaseModule out;
  FunctionRange fr{cp.addr, cp.addr + cp.code_len, cp.fid};
  CfgResult cr = recover_function(env, fr);
  if (!cr.ok()) {
    out.err = "cfg error " + std::to_string(int(cr.err)) + " at " +
              hex_u64(cr.err_pc);
    return out;
  }
  auto xr = translate_function(cr.cfg, rules, env);
  if (!xr.ok()) {
    out.err = "translate error " + std::to_string(int(xr.err));
    return out;
  }
  HandlerTable ht = select_handlers({xr.fn});
  uint8_t key[16];
  Rng krng(sub_seed(seed, "key"));
  for (auto& b : key) b = uint8_t(krng.next());
  auto ar = assemble_module({{&xr.fn, cp.addr}}, ht, {}, {}, key,
                            sub_seed(seed, "module"));
  if (!ar.ok()) {
    out.err = std::string("assemble error ") + mod_err_name(ar.err);
    return out;
  }
  out.mod = std::move(ar.mod);
  return out;
}

inline DiffVerdict differential_check(const CaseProgram& cp,
                                      const RuleTable& rules, uint64_t seed) {
  DiffVerdict v;
  MachineEnv eo, ev;
  setup_case_env(eo, cp);
  setup_case_env(ev, cp);

  RunOutcome oo = run_process(eo, nullptr, nullptr, cp.addr, cp.init);

  CaseModule cm = build_case_module(ev, cp, rules, seed);
  if (!cm.ok()) {
    v.pass = false;
    v.detail = cm.err;
    return v;
  }
  RunOutcome op = run_process(ev, &cm.mod, nullptr, cp.addr, cp.init);
  v.stats = op.stats;

  auto fail = [&](const std::string& field, const std::string& got,
                  const std::string& want) {
    v.pass = false;
    v.detail = field + ": protected " + got + " vs oracle " + want +
               " (dispatches " + std::to_string(op.stats.dispatches) + ")";
    return v;
  };

  if (op.kind != oo.kind)
    return fail("outcome", std::to_string(int(op.kind)),
                std::to_string(int(oo.kind)));
  if (op.err.kind != oo.err.kind)
    return fail("error kind", std::to_string(int(op.err.kind)),
                std::to_string(int(oo.err.kind)));
  for (int r = 0; r < 16; ++r)
    if (op.final_state.gpr[r] != oo.final_state.gpr[r])
      return fail(std::string("gpr ") + reg_name(uint8_t(r)),
                  hex_u64(op.final_state.gpr[r]),
                  hex_u64(oo.final_state.gpr[r]));
  if (op.final_state.rip != oo.final_state.rip)
    return fail("rip", hex_u64(op.final_state.rip),
                hex_u64(oo.final_state.rip));
  Flags fp = op.final_state.fl, fo = oo.final_state.fl;
  if (cp.mask_af) fp.af = fo.af = false;
  if (!(fp == fo)) {
    auto render = [](const Flags& f) {
      std::string s;
      s += f.cf ? 'C' : '-';
      s += f.pf ? 'P' : '-';
      s += f.af ? 'A' : '-';
      s += f.zf ? 'Z' : '-';
      s += f.sf ? 'S' : '-';
      s += f.of ? 'O' : '-';
      return s;
    };
    return fail("flags", render(fp), render(fo));
  }
  for (uint64_t page = kScratchBase; page < kScratchEnd; page += 4096) {
    const uint8_t* po = eo.page_data(page);
    const uint8_t* pv = ev.page_data(page);
    for (unsigned i = 0; i < 4096; ++i)
      if (po[i] != pv[i])
        return fail("mem " + hex_u64(page + i),
                    hex_u64(pv[i]), hex_u64(po[i]));
  }
  return v;
}

// Rule table with every rule for one opcode replaced by explicit fallbacks,
// forcing the VNATIVE path for that opcode.
inline RuleTable rules_without(Op op) {
  RuleTable t = RuleTable::defaults();
  for (const RuleKey& k : detail::supported_rule_keys()) {
    if (k.opcode != op) continue;
    TranslationRule r;
    r.fallback = true;
    t.insert(k, r);
  }
  return t;
}

}  // namespace xjp
