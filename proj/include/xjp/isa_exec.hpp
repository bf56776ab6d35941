#pragma once

// branch_info and the single-step reference interpreter (oracle).
// Included at the tail of isa.hpp.

#include <cstdint>

namespace xjp {

struct BranchInfo {
  enum class Kind : uint8_t {
    Fallthrough,
    DirectJump,
    ConditionalBranch,
    IndirectJump,
    CallDirect,
    CallIndirect,
    Return,
    Barrier,
  };
  Kind kind = Kind::Fallthrough;
  uint64_t target = 0;       // DirectJump / ConditionalBranch taken / CallDirect
  uint64_t fallthrough = 0;  // ConditionalBranch not-taken
};

inline BranchInfo branch_info(const Instruction& in, uint64_t pc) {
  BranchInfo b;
  uint64_t next = pc + in.raw_length;
  switch (in.opcode) {
    case Op::JMP:
      if (in.operands[0].is_imm()) {
        b.kind = BranchInfo::Kind::DirectJump;
        b.target = next + uint64_t(in.operands[0].imm);
      } else {
        b.kind = BranchInfo::Kind::IndirectJump;
      }
      break;
    case Op::JCC:
      b.kind = BranchInfo::Kind::ConditionalBranch;
      b.target = next + uint64_t(in.operands[0].imm);
      b.fallthrough = next;
      break;
    case Op::CALL:
      if (in.operands[0].is_imm()) {
        b.kind = BranchInfo::Kind::CallDirect;
        b.target = next + uint64_t(in.operands[0].imm);
      } else {
        b.kind = BranchInfo::Kind::CallIndirect;
      }
      break;
    case Op::RET:
      b.kind = BranchInfo::Kind::Return;
      break;
    case Op::INT3:
      b.kind = BranchInfo::Kind::Barrier;
      break;
    default:
      b.kind = BranchInfo::Kind::Fallthrough;
      break;
  }
  return b;
}

namespace detail {

inline uint64_t read_reg(const MachineState& s, uint8_t r, unsigned w) {
  return s.gpr[r] & alu::mask(w);
}

// Width-64 replaces, width-32 zero-extends, width-8 merges the low byte.
inline void write_reg(MachineState& s, uint8_t r, unsigned w, uint64_t v) {
  if (w == 64) s.gpr[r] = v;
  else if (w == 32) s.gpr[r] = v & 0xFFFFFFFFull;
  else s.gpr[r] = (s.gpr[r] & ~0xFFull) | (v & 0xFF);
}

inline uint64_t effective_address(const MachineState& s, const MemForm& m) {
  uint64_t a = uint64_t(int64_t(m.disp));
  if (m.base >= 0) a += s.gpr[m.base];
  if (m.index >= 0) a += s.gpr[m.index] * m.scale;
  return a;
}

struct OperandRef {
  bool is_mem = false;
  uint8_t reg = 0;
  uint64_t addr = 0;
};

inline OperandRef resolve(const MachineState& s, const Operand& o) {
  OperandRef r;
  if (o.is_mem()) {
    r.is_mem = true;
    r.addr = effective_address(s, o.mem);
  } else {
    r.reg = o.reg;
  }
  return r;
}

inline Exec load_op(const MachineState& s, MachineEnv& env, const OperandRef& r,
                    unsigned w, uint64_t& out) {
  if (r.is_mem) return env.read(r.addr, w / 8, out);
  out = read_reg(s, r.reg, w);
  return Exec::good();
}

inline Exec store_op(MachineState& s, MachineEnv& env, const OperandRef& r,
                     unsigned w, uint64_t v) {
  if (r.is_mem) return env.write(r.addr, w / 8, v);
  write_reg(s, r.reg, w, v);
  return Exec::good();
}

inline Exec push64(MachineState& s, MachineEnv& env, uint64_t v) {
  s.gpr[RSP] -= 8;
  return env.write(s.gpr[RSP], 8, v);
}

inline Exec pop64(MachineState& s, MachineEnv& env, uint64_t& v) {
  Exec e = env.read(s.gpr[RSP], 8, v);
  if (e.ok()) s.gpr[RSP] += 8;
  return e;
}

}  // namespace detail

// Executes one already-decoded instruction. state.rip must already point at
// the instruction; on success rip advances (or branches). On error the state
// may be partially updated; callers treat errors as terminal for the run.
inline Exec exec_instruction(const Instruction& in, MachineState& s,
                             MachineEnv& env) {
  using namespace detail;
  const unsigned w = in.width;
  uint64_t next = s.rip + in.raw_length;
  Flags& f = s.fl;

  auto val = [&](size_t i, unsigned width, uint64_t& out) -> Exec {
    const Operand& o = in.operands[i];
    if (o.is_imm()) {
      out = uint64_t(o.imm) & alu::mask(width);
      return Exec::good();
    }
    return load_op(s, env, resolve(s, o), width, out);
  };

  switch (in.opcode) {
    case Op::MOV: {
      uint64_t v;
      if (Exec e = val(1, w, v); !e.ok()) return e;
      if (Exec e = store_op(s, env, resolve(s, in.operands[0]), w, v); !e.ok())
        return e;
      break;
    }
    case Op::MOVZX: case Op::MOVSX: {
      uint64_t v;
      if (Exec e = val(1, in.src_width, v); !e.ok()) return e;
      if (in.opcode == Op::MOVSX)
        v = uint64_t(alu::sext(v, in.src_width)) & alu::mask(w);
      write_reg(s, in.operands[0].reg, w, v);
      break;
    }
    case Op::LEA: {
      uint64_t a = effective_address(s, in.operands[1].mem);
      write_reg(s, in.operands[0].reg, w, a);
      break;
    }
    case Op::XCHG: {
      OperandRef a = resolve(s, in.operands[0]);
      OperandRef b = resolve(s, in.operands[1]);
      uint64_t va, vb;
      if (Exec e = load_op(s, env, a, w, va); !e.ok()) return e;
      if (Exec e = load_op(s, env, b, w, vb); !e.ok()) return e;
      if (Exec e = store_op(s, env, a, w, vb); !e.ok()) return e;
      if (Exec e = store_op(s, env, b, w, va); !e.ok()) return e;
      break;
    }
    case Op::ADD: case Op::ADC: case Op::SUB: case Op::SBB:
    case Op::CMP: case Op::AND: case Op::OR: case Op::XOR: case Op::TEST: {
      OperandRef dst = resolve(s, in.operands[0]);
      uint64_t a, b;
      if (Exec e = load_op(s, env, dst, w, a); !e.ok()) return e;
      if (Exec e = val(1, w, b); !e.ok()) return e;
      uint64_t r = 0;
      bool store = true;
      switch (in.opcode) {
        case Op::ADD: r = alu::add(w, a, b, false, f); break;
        case Op::ADC: r = alu::add(w, a, b, f.cf, f); break;
        case Op::SUB: r = alu::sub(w, a, b, false, f); break;
        case Op::SBB: r = alu::sub(w, a, b, f.cf, f); break;
        case Op::CMP: alu::sub(w, a, b, false, f); store = false; break;
        case Op::AND: r = alu::logic(w, alu::LogicOp::And, a, b, f); break;
        case Op::OR:  r = alu::logic(w, alu::LogicOp::Or, a, b, f); break;
        case Op::XOR: r = alu::logic(w, alu::LogicOp::Xor, a, b, f); break;
        default: alu::logic(w, alu::LogicOp::And, a, b, f); store = false; break;
      }
      if (store)
        if (Exec e = store_op(s, env, dst, w, r); !e.ok()) return e;
      break;
    }
    case Op::NOT: case Op::NEG: case Op::INC: case Op::DEC: {
      OperandRef dst = resolve(s, in.operands[0]);
      uint64_t a;
      if (Exec e = load_op(s, env, dst, w, a); !e.ok()) return e;
      uint64_t r;
      switch (in.opcode) {
        case Op::NOT: r = ~a & alu::mask(w); break;
        case Op::NEG: r = alu::neg(w, a, f); break;
        case Op::INC: r = alu::inc(w, a, f); break;
        default: r = alu::dec(w, a, f); break;
      }
      if (Exec e = store_op(s, env, dst, w, r); !e.ok()) return e;
      break;
    }
    case Op::SHL: case Op::SHR: case Op::SAR: case Op::ROL: case Op::ROR: {
      OperandRef dst = resolve(s, in.operands[0]);
      uint64_t a, cnt;
      if (Exec e = load_op(s, env, dst, w, a); !e.ok()) return e;
      if (in.operands[1].is_imm()) cnt = uint64_t(in.operands[1].imm);
      else cnt = s.gpr[RCX] & 0xFF;
      uint64_t r;
      switch (in.opcode) {
        case Op::SHL: r = alu::shl(w, a, cnt, f); break;
        case Op::SHR: r = alu::shr(w, a, cnt, f); break;
        case Op::SAR: r = alu::sar(w, a, cnt, f); break;
        case Op::ROL: r = alu::rol(w, a, cnt, f); break;
        default: r = alu::ror(w, a, cnt, f); break;
      }
      if (Exec e = store_op(s, env, dst, w, r); !e.ok()) return e;
      break;
    }
    case Op::MUL: case Op::IMUL: {
      if (in.operands.size() == 2) {
        // IMUL r, r/m
        uint64_t a = read_reg(s, in.operands[0].reg, w), b;
        if (Exec e = val(1, w, b); !e.ok()) return e;
        uint64_t hi;
        uint64_t lo = alu::mul_s(w, a, b, hi, f);
        write_reg(s, in.operands[0].reg, w, lo);
        break;
      }
      uint64_t src;
      if (Exec e = val(0, w, src); !e.ok()) return e;
      if (w == 8) {
        // AX <- AL * src
        uint64_t a = s.gpr[RAX] & 0xFF, hi;
        uint64_t lo = in.opcode == Op::MUL ? alu::mul_u(8, a, src, hi, f)
                                           : alu::mul_s(8, a, src, hi, f);
        s.gpr[RAX] = (s.gpr[RAX] & ~0xFFFFull) | (lo & 0xFF) | ((hi & 0xFF) << 8);
      } else {
        uint64_t a = read_reg(s, RAX, w), hi;
        uint64_t lo = in.opcode == Op::MUL ? alu::mul_u(w, a, src, hi, f)
                                           : alu::mul_s(w, a, src, hi, f);
        write_reg(s, RAX, w, lo);
        write_reg(s, RDX, w, hi);
      }
      break;
    }
    case Op::DIV: case Op::IDIV: {
      uint64_t src;
      if (Exec e = val(0, w, src); !e.ok()) return e;
      uint64_t quot, rem;
      bool ok;
      if (w == 8) {
        uint64_t lo = s.gpr[RAX] & 0xFF, hi = (s.gpr[RAX] >> 8) & 0xFF;
        ok = in.opcode == Op::DIV ? alu::div_u(8, lo, hi, src, quot, rem)
                                  : alu::div_s(8, lo, hi, src, quot, rem);
        if (!ok) return Exec::fail(XKind::DivideError, s.rip);
        s.gpr[RAX] = (s.gpr[RAX] & ~0xFFFFull) | (quot & 0xFF) | ((rem & 0xFF) << 8);
      } else {
        uint64_t lo = read_reg(s, RAX, w), hi = read_reg(s, RDX, w);
        ok = in.opcode == Op::DIV ? alu::div_u(w, lo, hi, src, quot, rem)
                                  : alu::div_s(w, lo, hi, src, quot, rem);
        if (!ok) return Exec::fail(XKind::DivideError, s.rip);
        write_reg(s, RAX, w, quot);
        write_reg(s, RDX, w, rem);
      }
      break;
    }
    case Op::CDQ: {
      uint64_t sign = (s.gpr[RAX] >> 31) & 1 ? 0xFFFFFFFFull : 0;
      write_reg(s, RDX, 32, sign);
      break;
    }
    case Op::CQO: {
      uint64_t sign = (s.gpr[RAX] >> 63) & 1 ? ~0ull : 0;
      s.gpr[RDX] = sign;
      break;
    }
    case Op::PUSH: {
      uint64_t v;
      if (Exec e = val(0, 64, v); !e.ok()) return e;
      if (in.operands[0].is_imm()) v = uint64_t(in.operands[0].imm);
      if (Exec e = push64(s, env, v); !e.ok()) return e;
      break;
    }
    case Op::POP: {
      uint64_t v;
      if (Exec e = pop64(s, env, v); !e.ok()) return e;
      if (Exec e = store_op(s, env, resolve(s, in.operands[0]), 64, v); !e.ok())
        return e;
      break;
    }
    case Op::CALL: {
      uint64_t target;
      if (in.operands[0].is_imm()) {
        target = next + uint64_t(in.operands[0].imm);
      } else {
        if (Exec e = val(0, 64, target); !e.ok()) return e;
      }
      if (Exec e = push64(s, env, next); !e.ok()) return e;
      s.rip = target;
      return Exec::good();
    }
    case Op::RET: {
      uint64_t ra;
      if (Exec e = pop64(s, env, ra); !e.ok()) return e;
      if (!in.operands.empty()) s.gpr[RSP] += uint64_t(in.operands[0].imm);
      s.rip = ra;
      return Exec::good();
    }
    case Op::JMP: {
      uint64_t target;
      if (in.operands[0].is_imm()) {
        target = next + uint64_t(in.operands[0].imm);
      } else {
        if (Exec e = val(0, 64, target); !e.ok()) return e;
      }
      s.rip = target;
      return Exec::good();
    }
    case Op::JCC:
      s.rip = alu::cond_holds(in.cc, f) ? next + uint64_t(in.operands[0].imm)
                                        : next;
      return Exec::good();
    case Op::SETCC: {
      uint64_t v = alu::cond_holds(in.cc, f) ? 1 : 0;
      if (Exec e = store_op(s, env, resolve(s, in.operands[0]), 8, v); !e.ok())
        return e;
      break;
    }
    case Op::CMOVCC: {
      uint64_t v;
      if (Exec e = val(1, w, v); !e.ok()) return e;
      uint64_t cur = read_reg(s, in.operands[0].reg, w);
      // Not-taken 32-bit CMOV still zero-extends the destination.
      write_reg(s, in.operands[0].reg, w,
                alu::cond_holds(in.cc, f) ? v : cur);
      break;
    }
    case Op::NOP:
      break;
    case Op::INT3:
      return Exec::fail(XKind::Barrier, s.rip);
    case Op::LEAVE: {
      s.gpr[RSP] = s.gpr[RBP];
      uint64_t v;
      if (Exec e = pop64(s, env, v); !e.ok()) return e;
      s.gpr[RBP] = v;
      break;
    }
    case Op::BSWAP: {
      uint8_t r = in.operands[0].reg;
      write_reg(s, r, w, alu::bswap(w, read_reg(s, r, w)));
      break;
    }
    case Op::BT: {
      uint64_t v, idx;
      if (Exec e = load_op(s, env, resolve(s, in.operands[0]), w, v); !e.ok())
        return e;
      if (in.operands[1].is_imm()) idx = uint64_t(in.operands[1].imm);
      else idx = read_reg(s, in.operands[1].reg, w);
      // Model: bit index taken mod operand width for every operand form.
      f.cf = (v >> (idx % w)) & 1;
      break;
    }
  }
  s.rip = next;
  return Exec::good();
}

// Decode at rip and execute one step; the oracle against which the VM and
// the full pipeline are differentially tested.
inline Exec oracle_step(MachineState& s, MachineEnv& env) {
  std::vector<uint8_t> window;
  if (Exec e = env.fetch(s.rip, 15, window); !e.ok()) return e;
  DecodeResult d = decode(window.data(), window.size());
  if (!d.ok()) return Exec::fail(d.err, s.rip);
  return exec_instruction(d.inst, s, env);
}

}  // namespace xjp
