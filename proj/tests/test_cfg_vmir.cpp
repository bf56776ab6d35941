#include <catch2/catch_amalgamated.hpp>

#include "xjp/harness.hpp"

using namespace xjp;

namespace {

// loads raw code at addr and recovers it
CfgResult recover_bytes(MachineEnv& env, uint64_t addr,
                        std::vector<uint8_t> code,
                        const std::set<uint64_t>& nonret = {}) {
  env.load_image(1, addr, code);
  return recover_function(env, {addr, addr + code.size(), 1}, nonret);
}

std::vector<uint8_t> asm_insts(const std::vector<Instruction>& insts) {
  std::vector<uint8_t> out;
  for (const Instruction& in : insts) {
    auto e = encode(in);
    REQUIRE(e.has_value());
    out.insert(out.end(), e->begin(), e->end());
  }
  return out;
}

Instruction mk(Op op, std::vector<Operand> ops, uint8_t w = 64, uint8_t cc = 0) {
  Instruction in;
  in.opcode = op;
  in.width = w;
  in.cc = cc;
  in.operands = std::move(ops);
  return in;
}

}  // namespace

TEST_CASE("diamond control flow splits into four blocks") {
  // test rax,rax; jz L; add rbx,1; jmp M; L: add rbx,2; M: ret
  detail::MiniAsm a{0x40000};
  int L = a.new_label(), M = a.new_label();
  a.inst(mk(Op::TEST, {Operand::make_reg(RAX), Operand::make_reg(RAX)}));
  a.jcc(0x4, L);
  a.inst(mk(Op::ADD, {Operand::make_reg(RBX), Operand::make_imm(1)}));
  a.jmp(M);
  a.place(L);
  a.inst(mk(Op::ADD, {Operand::make_reg(RBX), Operand::make_imm(2)}));
  a.place(M);
  a.bytes.push_back(0xC3);
  a.fixup();

  MachineEnv env;
  CfgResult r = recover_bytes(env, 0x40000, a.bytes);
  REQUIRE(r.ok());
  CHECK(r.cfg.blocks.size() == 4);
  // the conditional block has two successors
  const BasicBlock& head = r.cfg.blocks.begin()->second;
  CHECK(head.successors.size() == 2);
}

TEST_CASE("jump table recovery") {
  // the program generator plants a 4-way table when index % 10 == 0
  CaseProgram cp = gen_program_case(0xAB, 0);
  REQUIRE(cp.has_jump_table);
  MachineEnv env;
  setup_case_env(env, cp);
  CfgResult r = recover_function(env, {cp.addr, cp.addr + cp.code_len, cp.fid});
  REQUIRE(r.ok());
  REQUIRE_FALSE(r.cfg.jump_tables.empty());
  for (const JumpTableRecord& t : r.cfg.jump_tables) {
    CHECK(t.targets.size() == 4);
    for (uint64_t tgt : t.targets) {
      CHECK(tgt >= cp.addr);
      CHECK(tgt < cp.addr + cp.code_len);
    }
  }
}

TEST_CASE("jump classification is by address range") {
  FunctionRange fr{0x1000, 0x2000, 1};
  CHECK(classify_jump(0x1800, fr) == JumpClass::LocalJump);
  CHECK(classify_jump(0x2000, fr) == JumpClass::TailCall);
  CHECK(classify_jump(0x0FFF, fr) == JumpClass::TailCall);
}

TEST_CASE("non-returning callee suppresses fallthrough") {
  // call <nonret>; <garbage that cannot decode>
  detail::MiniAsm a{0x40000};
  Instruction call = mk(Op::CALL, {Operand::make_imm(0)});
  // rel32 to 0x50000
  call.operands[0].imm = int64_t(0x50000) - int64_t(0x40000 + 5);
  a.inst(call);
  a.bytes.push_back(0x06);  // invalid opcode byte
  MachineEnv env;
  SECTION("declared non-returning: recovery stops at the call") {
    CfgResult r = recover_bytes(env, 0x40000, a.bytes, {0x50000});
    REQUIRE(r.ok());
  }
  SECTION("otherwise the fallthrough is decoded and fails") {
    CfgResult r = recover_bytes(env, 0x40000, a.bytes);
    REQUIRE_FALSE(r.ok());
    CHECK(r.err == CfgErr::DecodeFailure);
    CHECK(r.err_pc == 0x40005);
  }
}

TEST_CASE("unresolvable indirect jump is rejected") {
  // jmp rax (FF /4, register form): no table pattern
  MachineEnv env;
  CfgResult r = recover_bytes(env, 0x40000, {0xFF, 0xE0});
  REQUIRE_FALSE(r.ok());
  CHECK(r.err == CfgErr::NoTablePattern);
}

TEST_CASE("int3 terminates a block as a barrier") {
  MachineEnv env;
  CfgResult r = recover_bytes(env, 0x40000, {0xCC});
  REQUIRE(r.ok());
  REQUIRE(r.cfg.blocks.size() == 1);
  CHECK(r.cfg.blocks.begin()->second.successors.empty());
}

// ---------------------------------------------------------------------------
// Translation

namespace {

XlateResult translate_bytes(std::vector<uint8_t> code,
                            const RuleTable& rules = RuleTable::defaults(),
                            uint64_t addr = 0x40000) {
  MachineEnv env;
  env.load_image(1, addr, code);
  CfgResult r = recover_function(env, {addr, addr + code.size(), 1});
  REQUIRE(r.ok());
  return translate_function(r.cfg, rules, env);
}

bool has_vop(const VmirFunction& f, VOp op) {
  for (const VmirBlock& b : f.blocks)
    for (const VmirInst& i : b.insts)
      if (i.op == op) return true;
  return false;
}

}  // namespace

TEST_CASE("default rule table is total and parses") {
  CHECK_FALSE(RuleTable::defaults().check_totality().has_value());
  RuleTable t;
  CHECK(RuleTable::parse("RULE mov rr 64\n  VBOGUS v0, dst\nEND\n", t).has_value());
}

TEST_CASE("simple function translates without native fallback") {
  // mov rax, rbx; ret
  XlateResult x = translate_bytes(asm_insts(
      {mk(Op::MOV, {Operand::make_reg(RAX), Operand::make_reg(RBX)}),
       mk(Op::RET, {})}));
  REQUIRE(x.ok());
  CHECK_FALSE(has_vop(x.fn, VOp::VNATIVE));
  CHECK(has_vop(x.fn, VOp::VRET));
}

TEST_CASE("direct call to the throw entry lowers to VTHROW") {
  // code must sit near the throw entry for the rel32 to reach it
  const uint64_t base = 0xDFF00000;
  Instruction call = mk(Op::CALL, {Operand::make_imm(0)});
  call.operands[0].imm = int64_t(0xE0000000) - int64_t(base + 5);
  XlateResult x = translate_bytes(asm_insts({call, mk(Op::RET, {})}),
                                  RuleTable::defaults(), base);
  REQUIRE(x.ok());
  CHECK(has_vop(x.fn, VOp::VTHROW));
  CHECK_FALSE(has_vop(x.fn, VOp::VCALL));
}

TEST_CASE("explicit fallback routes through VNATIVE") {
  RuleTable t = rules_without(Op::MOV);
  XlateResult x = translate_bytes(
      asm_insts({mk(Op::MOV, {Operand::make_reg(RAX), Operand::make_reg(RBX)}),
                 mk(Op::RET, {})}),
      t);
  REQUIRE(x.ok());
  CHECK(has_vop(x.fn, VOp::VNATIVE));
}
