#pragma once

#include <cstdint>
#include <vector>

#include "xjp/assemble.hpp"

// The interpreter: VM context transfer, the fetch-decrypt-dispatch loop over
// per-cell next-links, and the context-switching native fallback.

namespace xjp {

struct VmContext {
  MachineState state;  // captured at entry, mutated by handlers
  uint64_t v[8] = {};
  uint32_t vip = kCellSentinel;
  uint64_t function_id = 0;
  uint64_t dispatch_count = 0;
  uint64_t fallback_count = 0;

  // set when a step exits the VM
  bool exited = false;
  uint64_t exit_rip = 0;
};

enum class StepKind : uint8_t { Running, Exited, Threw, NeedsFallback };

struct StepStatus {
  StepKind kind = StepKind::Running;
  Exec err;                          // non-ok terminates the run
  uint64_t throw_kind = 0;           // Threw: kThrowNew / kThrowRethrow
  uint64_t throw_pc = 0;             // Threw: pc of the simulated return site
  std::vector<uint8_t> native_bytes; // NeedsFallback

  bool ok() const { return err.ok(); }
};

enum class VmErr : uint8_t { None, UnknownFunction, NotExited };

inline VmErr vm_enter(VmContext& ctx, const MachineState& state,
                      const ProtectedModule& mod, uint64_t function_id) {
  const FunctionMapEntry* f = mod.find_function(function_id);
  if (!f) return VmErr::UnknownFunction;
  ctx = VmContext{};
  ctx.state = state;
  ctx.vip = f->entry_cell;
  ctx.function_id = function_id;
  return VmErr::None;
}

// Entry at an interior resume point (call return, catch target).
inline VmErr vm_enter_at(VmContext& ctx, const MachineState& state,
                         const ProtectedModule& mod, uint64_t function_id,
                         uint32_t cell) {
  VmErr e = vm_enter(ctx, state, mod, function_id);
  if (e == VmErr::None) ctx.vip = cell;
  return e;
}

inline VmErr vm_exit(const VmContext& ctx, MachineState& out) {
  if (!ctx.exited) return VmErr::NotExited;
  out = ctx.state;
  out.rip = ctx.exit_rip;
  return VmErr::None;
}

namespace detail {

// pc -> cell lookup within the executing function (jump-table dispatch).
inline std::optional<uint32_t> local_cell_for_pc(const FunctionMapEntry& f,
                                                 uint64_t pc) {
  for (auto& [lpc, cell] : f.label_cells)
    if (lpc == pc) return cell;
  return std::nullopt;
}

}  // namespace detail

inline StepStatus vm_step(VmContext& ctx, const ProtectedModule& mod,
                          MachineEnv& env) {
  StepStatus st;
  if (ctx.vip == kCellSentinel || ctx.vip >= mod.cell_count()) {
    st.err = Exec::fail(XKind::Internal, ctx.vip);
    return st;
  }
  BytecodeCell cell = mod.fetch_cell(ctx.vip);
  const HandlerDesc* h = mod.table.by_id(cell.handler_id);
  if (!h) {
    st.err = Exec::fail(XKind::BadHandlerId, cell.handler_id);
    return st;
  }
  ++ctx.dispatch_count;
  const unsigned w = h->width;
  MachineState& s = ctx.state;
  Flags& f = s.fl;
  uint64_t* v = ctx.v;
  uint32_t next = cell.next;

  auto exit_to = [&](uint64_t rip) {
    ctx.exited = true;
    ctx.exit_rip = rip;
    ctx.vip = kCellSentinel;
    st.kind = StepKind::Exited;
  };

  switch (h->op) {
    case VOp::VNOP:
      break;
    case VOp::VLIMM:
      v[cell.w[0]] = cell.w[1];
      break;
    case VOp::VLOADR:
      v[cell.w[0]] = s.gpr[cell.w[1]] & alu::mask(w);
      break;
    case VOp::VSTORER:
      detail::write_reg(s, uint8_t(cell.w[0]), w, v[cell.w[1]]);
      break;
    case VOp::VLOADM: {
      uint64_t out;
      if (Exec e = env.read(v[cell.w[1]], w / 8, out); !e.ok()) {
        st.err = e;
        return st;
      }
      v[cell.w[0]] = out;
      break;
    }
    case VOp::VSTOREM:
      if (Exec e = env.write(v[cell.w[0]], w / 8, v[cell.w[1]] & alu::mask(w));
          !e.ok()) {
        st.err = e;
        return st;
      }
      break;
    case VOp::VEA: {
      MemForm m = unpack_memform(cell.w[1]);
      v[cell.w[0]] = detail::effective_address(s, m);
      break;
    }
    case VOp::VADD:
      v[cell.w[0]] = alu::add(w, v[cell.w[1]], v[cell.w[2]], false, f);
      break;
    case VOp::VADC:
      v[cell.w[0]] = alu::add(w, v[cell.w[1]], v[cell.w[2]], f.cf, f);
      break;
    case VOp::VSUB:
      v[cell.w[0]] = alu::sub(w, v[cell.w[1]], v[cell.w[2]], false, f);
      break;
    case VOp::VSBB:
      v[cell.w[0]] = alu::sub(w, v[cell.w[1]], v[cell.w[2]], f.cf, f);
      break;
    case VOp::VAND:
      v[cell.w[0]] = alu::logic(w, alu::LogicOp::And, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VOR:
      v[cell.w[0]] = alu::logic(w, alu::LogicOp::Or, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VXOR:
      v[cell.w[0]] = alu::logic(w, alu::LogicOp::Xor, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VNOT:
      v[cell.w[0]] = ~v[cell.w[0]] & alu::mask(w);
      break;
    case VOp::VNEG:
      v[cell.w[0]] = alu::neg(w, v[cell.w[0]], f);
      break;
    case VOp::VSHL:
      v[cell.w[0]] = alu::shl(w, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VSHR:
      v[cell.w[0]] = alu::shr(w, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VSAR:
      v[cell.w[0]] = alu::sar(w, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VROL:
      v[cell.w[0]] = alu::rol(w, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VROR:
      v[cell.w[0]] = alu::ror(w, v[cell.w[1]], v[cell.w[2]], f);
      break;
    case VOp::VMULU: {
      uint64_t hi;
      v[cell.w[0]] = alu::mul_u(w, v[cell.w[0]], v[cell.w[2]], hi, f);
      v[cell.w[1]] = hi;
      break;
    }
    case VOp::VMULS: {
      uint64_t hi;
      v[cell.w[0]] = alu::mul_s(w, v[cell.w[0]], v[cell.w[2]], hi, f);
      v[cell.w[1]] = hi;
      break;
    }
    case VOp::VDIVU: {
      uint64_t q, r;
      if (!alu::div_u(w, v[cell.w[0]], v[cell.w[1]], v[cell.w[2]], q, r)) {
        st.err = Exec::fail(XKind::DivideError);
        return st;
      }
      v[cell.w[0]] = q;
      v[cell.w[1]] = r;
      break;
    }
    case VOp::VDIVS: {
      uint64_t q, r;
      if (!alu::div_s(w, v[cell.w[0]], v[cell.w[1]], v[cell.w[2]], q, r)) {
        st.err = Exec::fail(XKind::DivideError);
        return st;
      }
      v[cell.w[0]] = q;
      v[cell.w[1]] = r;
      break;
    }
    case VOp::VMOVX: {
      uint64_t x = v[cell.w[1]];
      switch (int64_t(cell.w[2])) {
        case kMovxZx8: x &= 0xFF; break;
        case kMovxZx32: x &= 0xFFFFFFFFull; break;
        case kMovxSx8: x = uint64_t(int64_t(int8_t(x))); break;
        case kMovxSx32: x = uint64_t(int64_t(int32_t(uint32_t(x)))); break;
        case kMovxSignFill32: x = (x >> 31) & 1 ? ~0ull : 0; break;
        case kMovxSignFill64: x = (x >> 63) & 1 ? ~0ull : 0; break;
        default: break;
      }
      v[cell.w[0]] = x;
      break;
    }
    case VOp::VSELECT:
      if (alu::cond_holds(uint8_t(cell.w[1]), f)) v[cell.w[0]] = v[cell.w[2]];
      break;
    case VOp::VPUSH:
      if (Exec e = detail::push64(s, env, v[cell.w[0]]); !e.ok()) {
        st.err = e;
        return st;
      }
      break;
    case VOp::VPOP:
      if (Exec e = detail::pop64(s, env, v[cell.w[0]]); !e.ok()) {
        st.err = e;
        return st;
      }
      break;
    case VOp::VBT:
      f.cf = (v[cell.w[0]] >> (v[cell.w[1]] % w)) & 1;
      break;
    case VOp::VBSWAP:
      v[cell.w[0]] = alu::bswap(w, v[cell.w[0]]);
      break;
    case VOp::VJMP:
      break;  // target is the next-link
    case VOp::VJCC:
      next = alu::cond_holds(uint8_t(cell.w[0]), f) ? uint32_t(cell.w[1])
                                                    : uint32_t(cell.w[2]);
      break;
    case VOp::VCALL:
      if (Exec e = detail::push64(s, env, cell.w[1]); !e.ok()) {
        st.err = e;
        return st;
      }
      exit_to(v[cell.w[0]]);
      return st;
    case VOp::VRET: {
      uint64_t ret;
      if (Exec e = detail::pop64(s, env, ret); !e.ok()) {
        st.err = e;
        return st;
      }
      s.gpr[RSP] += cell.w[0];
      exit_to(ret);
      return st;
    }
    case VOp::VTHROW:
      st.kind = StepKind::Threw;
      st.throw_kind = cell.w[0];
      st.throw_pc = cell.w[1];
      ctx.state.rip = cell.w[1];
      ctx.vip = kCellSentinel;
      return st;
    case VOp::VEXIT:
      switch (int64_t(cell.w[0])) {
        case kExitRedirect:
          exit_to(cell.w[1]);
          return st;
        case kExitBarrier:
          st.err = Exec::fail(XKind::Barrier, cell.w[1]);
          return st;
        case kExitIndirectLocal: {
          uint64_t target = v[cell.w[1]];
          const FunctionMapEntry* fe = mod.find_function(ctx.function_id);
          if (fe) {
            if (auto c = detail::local_cell_for_pc(*fe, target)) {
              ctx.vip = *c;
              return st;
            }
          }
          exit_to(target);
          return st;
        }
        default:
          st.err = Exec::fail(XKind::Internal, cell.w[0]);
          return st;
      }
    case VOp::VNATIVE: {
      st.kind = StepKind::NeedsFallback;
      size_t len = cell.w[0] & 0xFF;
      for (size_t i = 0; i < len && i < 7; ++i)
        st.native_bytes.push_back(uint8_t(cell.w[0] >> (8 * (i + 1))));
      for (size_t i = 7; i < len; ++i)
        st.native_bytes.push_back(uint8_t(cell.w[1] >> (8 * (i - 7))));
      return st;  // vip advanced by native_fallback
    }
  }

  ctx.vip = next;
  if (next != kCellSentinel && next >= mod.cell_count())
    st.err = Exec::fail(XKind::Internal, next);
  return st;
}

// Context-switching fallback: materialize the state, run the one instruction
// through the oracle, recapture, advance vip via the cell's next-link.
inline Exec native_fallback(VmContext& ctx, const ProtectedModule& mod,
                            const std::vector<uint8_t>& bytes,
                            MachineEnv& env) {
  DecodeResult d = decode(bytes.data(), bytes.size());
  if (!d.ok()) return Exec::fail(d.err);
  MachineState s = ctx.state;
  Exec e = exec_instruction(d.inst, s, env);
  if (!e.ok()) return e;
  uint64_t rip_keep = ctx.state.rip;
  ctx.state = s;
  ctx.state.rip = rip_keep;
  ++ctx.fallback_count;
  BytecodeCell cell = mod.fetch_cell(ctx.vip);
  ctx.vip = cell.next;
  return Exec::good();
}

}  // namespace xjp
