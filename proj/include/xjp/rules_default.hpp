#pragma once

#include "xjp/vmir.hpp"

// Default translation rules. Format, one rule per line:
//   RULE <opcode>.<shape>.<width> => <vop> <args>; <vop> <args>; ...
//   FALLBACK <opcode>.<shape>.<width>
// width `*` covers 8/32/64. `$dst`/`$src` are operand 0/1, `$imm` the
// immediate, `$cc` the condition code. A `.N` suffix on a vop overrides the
// instruction width for that step. FALLBACK routes the key through VNATIVE.

namespace xjp {

inline const char* default_rules_text() {
  return R"RULES(
# data movement
RULE MOV.rr.* => VLOADR v0 $src; VSTORER $dst v0
RULE MOV.ri.* => VLIMM v0 $imm; VSTORER $dst v0
RULE MOV.rm.* => VEA v1 $src; VLOADM v0 v1; VSTORER $dst v0
RULE MOV.mr.* => VEA v1 $dst; VLOADR v0 $src; VSTOREM v1 v0
RULE MOV.mi.* => VEA v1 $dst; VLIMM v0 $imm; VSTOREM v1 v0

RULE MOVZX.rr8.32 => VLOADR v0 $src; VMOVX v0 v0 0; VSTORER $dst v0
RULE MOVZX.rr8.64 => VLOADR v0 $src; VMOVX v0 v0 0; VSTORER $dst v0
RULE MOVZX.rm8.32 => VEA v1 $src; VLOADM.8 v0 v1; VMOVX v0 v0 0; VSTORER $dst v0
RULE MOVZX.rm8.64 => VEA v1 $src; VLOADM.8 v0 v1; VMOVX v0 v0 0; VSTORER $dst v0
RULE MOVSX.rr8.32 => VLOADR v0 $src; VMOVX v0 v0 2; VSTORER $dst v0
RULE MOVSX.rr8.64 => VLOADR v0 $src; VMOVX v0 v0 2; VSTORER $dst v0
RULE MOVSX.rm8.32 => VEA v1 $src; VLOADM.8 v0 v1; VMOVX v0 v0 2; VSTORER $dst v0
RULE MOVSX.rm8.64 => VEA v1 $src; VLOADM.8 v0 v1; VMOVX v0 v0 2; VSTORER $dst v0
RULE MOVSX.rr32.64 => VLOADR v0 $src; VMOVX v0 v0 3; VSTORER $dst v0
RULE MOVSX.rm32.64 => VEA v1 $src; VLOADM.32 v0 v1; VMOVX v0 v0 3; VSTORER $dst v0

RULE LEA.rm.32 => VEA v0 $src; VSTORER $dst v0
RULE LEA.rm.64 => VEA v0 $src; VSTORER $dst v0

RULE XCHG.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VSTORER $dst v1; VSTORER $src v0
RULE XCHG.rm.* => VEA v2 $src; VLOADM v0 v2; VLOADR v1 $dst; VSTOREM v2 v1; VSTORER $dst v0
RULE XCHG.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VSTOREM v2 v1; VSTORER $src v0

# two-operand arithmetic / logic
RULE ADD.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VADD v0 v0 v1; VSTORER $dst v0
RULE ADD.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VADD v0 v0 v1; VSTORER $dst v0
RULE ADD.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VADD v0 v0 v1; VSTORER $dst v0
RULE ADD.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VADD v0 v0 v1; VSTOREM v2 v0
RULE ADD.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VADD v0 v0 v1; VSTOREM v2 v0
RULE ADC.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VADC v0 v0 v1; VSTORER $dst v0
RULE ADC.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VADC v0 v0 v1; VSTORER $dst v0
RULE ADC.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VADC v0 v0 v1; VSTORER $dst v0
RULE ADC.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VADC v0 v0 v1; VSTOREM v2 v0
RULE ADC.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VADC v0 v0 v1; VSTOREM v2 v0
RULE SUB.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VSUB v0 v0 v1; VSTORER $dst v0
RULE SUB.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VSUB v0 v0 v1; VSTORER $dst v0
RULE SUB.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VSUB v0 v0 v1; VSTORER $dst v0
RULE SUB.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VSUB v0 v0 v1; VSTOREM v2 v0
RULE SUB.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VSUB v0 v0 v1; VSTOREM v2 v0
RULE SBB.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VSBB v0 v0 v1; VSTORER $dst v0
RULE SBB.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VSBB v0 v0 v1; VSTORER $dst v0
RULE SBB.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VSBB v0 v0 v1; VSTORER $dst v0
RULE SBB.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VSBB v0 v0 v1; VSTOREM v2 v0
RULE SBB.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VSBB v0 v0 v1; VSTOREM v2 v0
RULE AND.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VAND v0 v0 v1; VSTORER $dst v0
RULE AND.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VAND v0 v0 v1; VSTORER $dst v0
RULE AND.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VAND v0 v0 v1; VSTORER $dst v0
RULE AND.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VAND v0 v0 v1; VSTOREM v2 v0
RULE AND.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VAND v0 v0 v1; VSTOREM v2 v0
RULE OR.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VOR v0 v0 v1; VSTORER $dst v0
RULE OR.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VOR v0 v0 v1; VSTORER $dst v0
RULE OR.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VOR v0 v0 v1; VSTORER $dst v0
RULE OR.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VOR v0 v0 v1; VSTOREM v2 v0
RULE OR.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VOR v0 v0 v1; VSTOREM v2 v0
RULE XOR.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VXOR v0 v0 v1; VSTORER $dst v0
RULE XOR.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VXOR v0 v0 v1; VSTORER $dst v0
RULE XOR.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VXOR v0 v0 v1; VSTORER $dst v0
RULE XOR.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VXOR v0 v0 v1; VSTOREM v2 v0
RULE XOR.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VXOR v0 v0 v1; VSTOREM v2 v0

# compare / test: same ALU ops, result discarded
RULE CMP.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VSUB v0 v0 v1
RULE CMP.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VSUB v0 v0 v1
RULE CMP.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VSUB v0 v0 v1
RULE CMP.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VSUB v0 v0 v1
RULE CMP.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VSUB v0 v0 v1
RULE TEST.rr.* => VLOADR v0 $dst; VLOADR v1 $src; VAND v0 v0 v1
RULE TEST.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VAND v0 v0 v1
RULE TEST.rm.* => VEA v2 $src; VLOADR v0 $dst; VLOADM v1 v2; VAND v0 v0 v1
RULE TEST.mr.* => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VAND v0 v0 v1
RULE TEST.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VAND v0 v0 v1

# single-operand group. INC/DEC capture CF first (VSELECT on cc B), let the
# add/sub write all flags, then restore CF with VBT against bit 0.
RULE NOT.r.* => VLOADR v0 $dst; VNOT v0; VSTORER $dst v0
RULE NOT.m.* => VEA v1 $dst; VLOADM v0 v1; VNOT v0; VSTOREM v1 v0
RULE NEG.r.* => VLOADR v0 $dst; VNEG v0; VSTORER $dst v0
RULE NEG.m.* => VEA v1 $dst; VLOADM v0 v1; VNEG v0; VSTOREM v1 v0
RULE INC.r.* => VLIMM v3 0; VLIMM v4 1; VSELECT v3 2 v4; VLOADR v0 $dst; VLIMM v1 1; VADD v0 v0 v1; VLIMM v5 0; VBT v3 v5; VSTORER $dst v0
RULE INC.m.* => VLIMM v3 0; VLIMM v4 1; VSELECT v3 2 v4; VEA v2 $dst; VLOADM v0 v2; VLIMM v1 1; VADD v0 v0 v1; VLIMM v5 0; VBT v3 v5; VSTOREM v2 v0
RULE DEC.r.* => VLIMM v3 0; VLIMM v4 1; VSELECT v3 2 v4; VLOADR v0 $dst; VLIMM v1 1; VSUB v0 v0 v1; VLIMM v5 0; VBT v3 v5; VSTORER $dst v0
RULE DEC.m.* => VLIMM v3 0; VLIMM v4 1; VSELECT v3 2 v4; VEA v2 $dst; VLOADM v0 v2; VLIMM v1 1; VSUB v0 v0 v1; VLIMM v5 0; VBT v3 v5; VSTOREM v2 v0

# shifts and rotates
RULE SHL.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VSHL v0 v0 v1; VSTORER $dst v0
RULE SHL.rc.* => VLOADR v0 $dst; VLOADR.8 v1 rcx; VSHL v0 v0 v1; VSTORER $dst v0
RULE SHL.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VSHL v0 v0 v1; VSTOREM v2 v0
RULE SHL.mc.* => VEA v2 $dst; VLOADM v0 v2; VLOADR.8 v1 rcx; VSHL v0 v0 v1; VSTOREM v2 v0
RULE SHR.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VSHR v0 v0 v1; VSTORER $dst v0
RULE SHR.rc.* => VLOADR v0 $dst; VLOADR.8 v1 rcx; VSHR v0 v0 v1; VSTORER $dst v0
RULE SHR.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VSHR v0 v0 v1; VSTOREM v2 v0
RULE SHR.mc.* => VEA v2 $dst; VLOADM v0 v2; VLOADR.8 v1 rcx; VSHR v0 v0 v1; VSTOREM v2 v0
RULE SAR.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VSAR v0 v0 v1; VSTORER $dst v0
RULE SAR.rc.* => VLOADR v0 $dst; VLOADR.8 v1 rcx; VSAR v0 v0 v1; VSTORER $dst v0
RULE SAR.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VSAR v0 v0 v1; VSTOREM v2 v0
RULE SAR.mc.* => VEA v2 $dst; VLOADM v0 v2; VLOADR.8 v1 rcx; VSAR v0 v0 v1; VSTOREM v2 v0
RULE ROL.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VROL v0 v0 v1; VSTORER $dst v0
RULE ROL.rc.* => VLOADR v0 $dst; VLOADR.8 v1 rcx; VROL v0 v0 v1; VSTORER $dst v0
RULE ROL.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VROL v0 v0 v1; VSTOREM v2 v0
RULE ROL.mc.* => VEA v2 $dst; VLOADM v0 v2; VLOADR.8 v1 rcx; VROL v0 v0 v1; VSTOREM v2 v0
RULE ROR.ri.* => VLOADR v0 $dst; VLIMM v1 $imm; VROR v0 v0 v1; VSTORER $dst v0
RULE ROR.rc.* => VLOADR v0 $dst; VLOADR.8 v1 rcx; VROR v0 v0 v1; VSTORER $dst v0
RULE ROR.mi.* => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VROR v0 v0 v1; VSTOREM v2 v0
RULE ROR.mc.* => VEA v2 $dst; VLOADM v0 v2; VLOADR.8 v1 rcx; VROR v0 v0 v1; VSTOREM v2 v0

# multiply / divide. The widening 8-bit forms write AH:AL and are handled
# through the native fallback path.
RULE IMUL.rr.32 => VLOADR v0 $dst; VLOADR v1 $src; VMULS v0 v2 v1; VSTORER $dst v0
RULE IMUL.rr.64 => VLOADR v0 $dst; VLOADR v1 $src; VMULS v0 v2 v1; VSTORER $dst v0
RULE IMUL.rm.32 => VEA v3 $src; VLOADR v0 $dst; VLOADM v1 v3; VMULS v0 v2 v1; VSTORER $dst v0
RULE IMUL.rm.64 => VEA v3 $src; VLOADR v0 $dst; VLOADM v1 v3; VMULS v0 v2 v1; VSTORER $dst v0
FALLBACK IMUL.r.8
FALLBACK IMUL.m.8
RULE IMUL.r.32 => VLOADR v0 rax; VLOADR v1 $dst; VMULS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE IMUL.r.64 => VLOADR v0 rax; VLOADR v1 $dst; VMULS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE IMUL.m.32 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VMULS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE IMUL.m.64 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VMULS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
FALLBACK MUL.r.8
FALLBACK MUL.m.8
RULE MUL.r.32 => VLOADR v0 rax; VLOADR v1 $dst; VMULU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE MUL.r.64 => VLOADR v0 rax; VLOADR v1 $dst; VMULU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE MUL.m.32 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VMULU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE MUL.m.64 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VMULU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
FALLBACK DIV.r.8
FALLBACK DIV.m.8
RULE DIV.r.32 => VLOADR v0 rax; VLOADR v2 rdx; VLOADR v1 $dst; VDIVU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE DIV.r.64 => VLOADR v0 rax; VLOADR v2 rdx; VLOADR v1 $dst; VDIVU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE DIV.m.32 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VLOADR v2 rdx; VDIVU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE DIV.m.64 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VLOADR v2 rdx; VDIVU v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
FALLBACK IDIV.r.8
FALLBACK IDIV.m.8
RULE IDIV.r.32 => VLOADR v0 rax; VLOADR v2 rdx; VLOADR v1 $dst; VDIVS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE IDIV.r.64 => VLOADR v0 rax; VLOADR v2 rdx; VLOADR v1 $dst; VDIVS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE IDIV.m.32 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VLOADR v2 rdx; VDIVS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2
RULE IDIV.m.64 => VEA v3 $dst; VLOADM v1 v3; VLOADR v0 rax; VLOADR v2 rdx; VDIVS v0 v2 v1; VSTORER rax v0; VSTORER rdx v2

# sign extension into rdx
RULE CDQ.n.32 => VLOADR v0 rax; VMOVX v0 v0 4; VSTORER rdx v0
RULE CQO.n.64 => VLOADR v0 rax; VMOVX v0 v0 5; VSTORER rdx v0

# stack
RULE PUSH.r.64 => VLOADR v0 $dst; VPUSH v0
RULE PUSH.i.64 => VLIMM v0 $imm; VPUSH v0
RULE PUSH.m.64 => VEA v1 $dst; VLOADM v0 v1; VPUSH v0
RULE POP.r.64 => VPOP v0; VSTORER $dst v0
RULE POP.m.64 => VPOP v0; VEA v1 $dst; VSTOREM v1 v0

# conditional select
RULE SETCC.r.8 => VLIMM v0 0; VLIMM v1 1; VSELECT v0 $cc v1; VSTORER $dst v0
RULE SETCC.m.8 => VLIMM v0 0; VLIMM v1 1; VSELECT v0 $cc v1; VEA v2 $dst; VSTOREM v2 v0
RULE CMOVCC.rr.32 => VLOADR v0 $dst; VLOADR v1 $src; VSELECT v0 $cc v1; VSTORER $dst v0
RULE CMOVCC.rr.64 => VLOADR v0 $dst; VLOADR v1 $src; VSELECT v0 $cc v1; VSTORER $dst v0
RULE CMOVCC.rm.32 => VEA v2 $src; VLOADM v1 v2; VLOADR v0 $dst; VSELECT v0 $cc v1; VSTORER $dst v0
RULE CMOVCC.rm.64 => VEA v2 $src; VLOADM v1 v2; VLOADR v0 $dst; VSELECT v0 $cc v1; VSTORER $dst v0

# misc
RULE NOP.n.64 =>
RULE LEAVE.n.64 => VLOADR v0 rbp; VSTORER rsp v0; VPOP v1; VSTORER rbp v1
RULE BSWAP.r.32 => VLOADR v0 $dst; VBSWAP v0; VSTORER $dst v0
RULE BSWAP.r.64 => VLOADR v0 $dst; VBSWAP v0; VSTORER $dst v0
RULE BT.rr.32 => VLOADR v0 $dst; VLOADR v1 $src; VBT v0 v1
RULE BT.rr.64 => VLOADR v0 $dst; VLOADR v1 $src; VBT v0 v1
RULE BT.ri.32 => VLOADR v0 $dst; VLIMM v1 $imm; VBT v0 v1
RULE BT.ri.64 => VLOADR v0 $dst; VLIMM v1 $imm; VBT v0 v1
RULE BT.mr.32 => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VBT v0 v1
RULE BT.mr.64 => VEA v2 $dst; VLOADM v0 v2; VLOADR v1 $src; VBT v0 v1
RULE BT.mi.32 => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VBT v0 v1
RULE BT.mi.64 => VEA v2 $dst; VLOADM v0 v2; VLIMM v1 $imm; VBT v0 v1
)RULES";
}

inline const RuleTable& RuleTable::defaults() {
  static const RuleTable table = [] {
    RuleTable t;
    auto err = RuleTable::parse(default_rules_text(), t);
    if (err) throw std::runtime_error("default rule table: " + *err);
    if (auto gap = t.check_totality())
      throw std::runtime_error("default rule table: " + *gap);
    return t;
  }();
  return table;
}

}  // namespace xjp
