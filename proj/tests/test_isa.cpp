#include <catch2/catch_amalgamated.hpp>

#include "xjp/harness.hpp"

using namespace xjp;

// Decoder goldens against hand-assembled hardware encodings. The
// differential harness cannot catch decoder mapping bugs because the oracle
// and the VM share the decoder, so these bytes are frozen here.

namespace {

std::vector<uint8_t> unhex(const char* s) {
  auto nib = [](char c) {
    return uint8_t(c <= '9' ? c - '0' : c - 'a' + 10);
  };
  std::vector<uint8_t> out;
  for (; s[0] && s[1]; s += 2) out.push_back(uint8_t(nib(s[0]) << 4 | nib(s[1])));
  return out;
}

Instruction decode_hex(const char* hex) {
  std::vector<uint8_t> b = unhex(hex);
  DecodeResult r = decode(b.data(), b.size());
  REQUIRE(r.ok());
  REQUIRE(r.consumed == b.size());
  return r.inst;
}

}  // namespace

TEST_CASE("decode goldens: moves and group-1 arithmetic") {
  struct G {
    const char* hex;
    Op op;
    uint8_t width;
  };
  // the /digit order ADD OR ADC SBB AND SUB XOR CMP is easy to scramble;
  // each digit is pinned with an explicit encoding
  const G cases[] = {
      {"4889d8", Op::MOV, 64},    // mov rax, rbx
      {"89d8", Op::MOV, 32},      // mov eax, ebx
      {"4883c028", Op::ADD, 64},  // add rax, 0x28  (/0)
      {"4883c828", Op::OR, 64},   // or rax, 0x28   (/1)
      {"4883d028", Op::ADC, 64},  // adc rax, 0x28  (/2)
      {"4883d828", Op::SBB, 64},  // sbb rax, 0x28  (/3)
      {"4883e028", Op::AND, 64},  // and rax, 0x28  (/4)
      {"4883ec28", Op::SUB, 64},  // sub rsp, 0x28  (/5)
      {"4883f428", Op::XOR, 64},  // xor rsp, 0x28  (/6)
      {"4883f828", Op::CMP, 64},  // cmp rax, 0x28  (/7)
      {"4881c178563412", Op::ADD, 64},  // add rcx, 0x12345678
      {"0fb6c3", Op::MOVZX, 32},  // movzx eax, bl
      {"480fbec3", Op::MOVSX, 64},  // movsx rax, bl
      {"4863c3", Op::MOVSX, 64},  // movsxd rax, ebx
      {"488d4310", Op::LEA, 64},  // lea rax, [rbx+0x10]
      {"4887d8", Op::XCHG, 64},   // xchg rax, rbx
      {"48f7d0", Op::NOT, 64},    // not rax (F7 /2)
      {"48f7d8", Op::NEG, 64},    // neg rax (F7 /3)
      {"48f7e3", Op::MUL, 64},    // mul rbx (F7 /4)
      {"48f7eb", Op::IMUL, 64},   // imul rbx (F7 /5)
      {"48f7f3", Op::DIV, 64},    // div rbx (F7 /6)
      {"48f7fb", Op::IDIV, 64},   // idiv rbx (F7 /7)
      {"480fafc3", Op::IMUL, 64},  // imul rax, rbx
      {"48ffc0", Op::INC, 64},    // inc rax (FF /0)
      {"48ffc8", Op::DEC, 64},    // dec rax (FF /1)
      {"48d3e0", Op::SHL, 64},    // shl rax, cl (D3 /4)
      {"48c1e005", Op::SHL, 64},  // shl rax, 5
      {"48c1e805", Op::SHR, 64},  // shr rax, 5 (/5)
      {"48c1f805", Op::SAR, 64},  // sar rax, 5 (/7)
      {"48c1c005", Op::ROL, 64},  // rol rax, 5 (/0)
      {"48c1c805", Op::ROR, 64},  // ror rax, 5 (/1)
      {"99", Op::CDQ, 32},
      {"4899", Op::CQO, 64},
      {"50", Op::PUSH, 64},       // push rax
      {"4150", Op::PUSH, 64},     // push r8
      {"5d", Op::POP, 64},        // pop rbp
      {"e805000000", Op::CALL, 64},
      {"c3", Op::RET, 64},
      {"e910000000", Op::JMP, 64},
      {"0f8410000000", Op::JCC, 64},  // je
      {"0f95c0", Op::SETCC, 8},       // setne al
      {"480f45c3", Op::CMOVCC, 64},   // cmovne rax, rbx
      {"90", Op::NOP, 64},
      {"cc", Op::INT3, 64},
      {"c9", Op::LEAVE, 64},
      {"480fc8", Op::BSWAP, 64},      // bswap rax
      {"480fa3d8", Op::BT, 64},       // bt rax, rbx
      {"480fbae020", Op::BT, 64},     // bt rax, 0x20 (0F BA /4)
      {"84db", Op::TEST, 8},          // test bl, bl
      {"4885db", Op::TEST, 64},       // test rbx, rbx
  };
  for (const G& g : cases) {
    INFO(g.hex);
    Instruction in = decode_hex(g.hex);
    CHECK(in.opcode == g.op);
    CHECK(in.width == g.width);
  }
}

TEST_CASE("decode goldens: operand detail") {
  SECTION("mov rcx, [rbx+rcx*4+0x10]") {
    Instruction in = decode_hex("488b4c8b10");
    REQUIRE(in.opcode == Op::MOV);
    REQUIRE(in.operands.size() == 2);
    CHECK(in.operands[0].reg == RCX);
    const MemForm& m = in.operands[1].mem;
    CHECK(m.base == RBX);
    CHECK(m.index == RCX);
    CHECK(m.scale == 4);
    CHECK(m.disp == 0x10);
  }
  SECTION("canonical harness shape [rbx+rcx*8+0x1000]") {
    Instruction in = decode_hex("488b8ccb00100000");
    const MemForm& m = in.operands[1].mem;
    CHECK(m.base == RBX);
    CHECK(m.index == RCX);
    CHECK(m.scale == 8);
    CHECK(m.disp == 0x1000);
  }
  SECTION("REX.B extends short push/pop") {
    CHECK(decode_hex("4150").operands[0].reg == R8);
    CHECK(decode_hex("415f").operands[0].reg == R15);
    CHECK(decode_hex("58").opcode == Op::POP);
  }
  SECTION("group immediate width") {
    CHECK(decode_hex("4883ec28").operands[1].imm == 0x28);
    CHECK(decode_hex("4881ec00010000").operands[1].imm == 0x100);
    // sign extension of the 8-bit form
    CHECK(decode_hex("4883ecf8").operands[1].imm == -8);
  }
  SECTION("mov r64, imm64") {
    Instruction in = decode_hex("48b8efbeaddeefbeadde");
    CHECK(in.opcode == Op::MOV);
    CHECK(uint64_t(in.operands[1].imm) == 0xdeadbeefdeadbeefull);
  }
  SECTION("jcc condition code") {
    CHECK(decode_hex("0f8410000000").cc == 0x4);   // je
    CHECK(decode_hex("0f8f10000000").cc == 0xF);   // jg
    CHECK(decode_hex("0f95c0").cc == 0x5);         // setne
  }
}

TEST_CASE("encode goldens") {
  struct E {
    Instruction in;
    const char* hex;
  };
  auto R = [](uint8_t r) { return Operand::make_reg(r); };
  auto I = [](int64_t v) { return Operand::make_imm(v); };
  auto mk = [](Op op, uint8_t w, std::vector<Operand> ops) {
    Instruction in;
    in.opcode = op;
    in.width = w;
    in.operands = std::move(ops);
    return in;
  };
  const E cases[] = {
      {mk(Op::MOV, 64, {R(RAX), R(RBX)}), "4889d8"},
      {mk(Op::SUB, 64, {R(RSP), I(0x28)}), "4883ec28"},
      {mk(Op::XOR, 64, {R(RSP), I(0x28)}), "4883f428"},
      {mk(Op::ADD, 64, {R(RCX), I(0x12345678)}), "4881c178563412"},
      {mk(Op::PUSH, 64, {R(RAX)}), "50"},
      {mk(Op::PUSH, 64, {R(R8)}), "4150"},
      {mk(Op::POP, 64, {R(RBP)}), "5d"},
      {mk(Op::RET, 64, {}), "c3"},
  };
  for (const E& e : cases) {
    INFO(e.hex);
    auto bytes = encode(e.in);
    REQUIRE(bytes.has_value());
    CHECK(*bytes == unhex(e.hex));
  }
}

TEST_CASE("encode/decode round trip over the generator's case programs") {
  for (uint64_t i = 0; i < 400; ++i) {
    CaseProgram cp = gen_isa_case(0xC0FFEE, i);
    size_t off = 0;
    while (off < cp.code.size()) {
      DecodeResult d = decode(cp.code.data() + off, cp.code.size() - off);
      REQUIRE(d.ok());
      auto e = encode(d.inst);
      REQUIRE(e.has_value());
      // re-encoding the decoded form reproduces the original bytes
      CHECK(std::equal(e->begin(), e->end(), cp.code.begin() + long(off)));
      off += d.consumed;
    }
  }
}

// Independent flag reference: recomputes CF/OF/AF from first principles
// (wide arithmetic and signed range checks) rather than the bit identities
// the interpreter uses.

namespace {

struct RefFlags {
  bool cf, pf, af, zf, sf, of;
};

RefFlags ref_add(unsigned w, uint64_t a, uint64_t b) {
  uint64_t m = alu::mask(w);
  a &= m;
  b &= m;
  unsigned __int128 wide = (unsigned __int128)a + b;
  uint64_t res = uint64_t(wide) & m;
  auto sext = [&](uint64_t v) {
    return int64_t(v << (64 - w)) >> (64 - w);
  };
  __int128 swide = (__int128)sext(a) + sext(b);
  RefFlags f{};
  f.cf = (wide >> w) != 0;
  f.of = swide != sext(res);
  f.af = (a & 0xF) + (b & 0xF) > 0xF;
  f.zf = res == 0;
  f.sf = (res >> (w - 1)) & 1;
  int bits = 0;
  for (int i = 0; i < 8; ++i) bits += (res >> i) & 1;
  f.pf = bits % 2 == 0;
  return f;
}

RefFlags ref_sub(unsigned w, uint64_t a, uint64_t b) {
  uint64_t m = alu::mask(w);
  a &= m;
  b &= m;
  uint64_t res = (a - b) & m;
  auto sext = [&](uint64_t v) {
    return int64_t(v << (64 - w)) >> (64 - w);
  };
  __int128 swide = (__int128)sext(a) - sext(b);
  RefFlags f{};
  f.cf = b > a;
  f.of = swide != sext(res);
  f.af = (a & 0xF) < (b & 0xF);
  f.zf = res == 0;
  f.sf = (res >> (w - 1)) & 1;
  int bits = 0;
  for (int i = 0; i < 8; ++i) bits += (res >> i) & 1;
  f.pf = bits % 2 == 0;
  return f;
}

}  // namespace

TEST_CASE("flag semantics against an independent reference") {
  Rng rng(0xF1A65);
  for (unsigned w : {8u, 32u, 64u}) {
    for (int i = 0; i < 2000; ++i) {
      uint64_t a = rng.next(), b = rng.next();
      if (i % 3 == 0) b = boundary_immediates()[rng.below(12)];
      Flags f{};
      alu::add(w, a, b, false, f);
      RefFlags r = ref_add(w, a, b);
      INFO("add w" << w << " " << hex_u64(a) << " " << hex_u64(b));
      CHECK(f.cf == r.cf);
      CHECK(f.of == r.of);
      CHECK(f.af == r.af);
      CHECK(f.zf == r.zf);
      CHECK(f.sf == r.sf);
      CHECK(f.pf == r.pf);

      Flags g{};
      alu::sub(w, a, b, false, g);
      RefFlags s = ref_sub(w, a, b);
      INFO("sub w" << w << " " << hex_u64(a) << " " << hex_u64(b));
      CHECK(g.cf == s.cf);
      CHECK(g.of == s.of);
      CHECK(g.af == s.af);
      CHECK(g.zf == s.zf);
      CHECK(g.sf == s.sf);
      CHECK(g.pf == s.pf);
    }
  }
}

TEST_CASE("AF is declared only for the adjust-sensitive group") {
  CHECK(af_defined(Op::ADD));
  CHECK(af_defined(Op::ADC));
  CHECK(af_defined(Op::SUB));
  CHECK(af_defined(Op::SBB));
  CHECK(af_defined(Op::CMP));
  CHECK(af_defined(Op::INC));
  CHECK(af_defined(Op::DEC));
  CHECK(af_defined(Op::NEG));
  CHECK_FALSE(af_defined(Op::AND));
  CHECK_FALSE(af_defined(Op::SHL));
  CHECK_FALSE(af_defined(Op::IMUL));
  CHECK_FALSE(af_defined(Op::MOV));
}

TEST_CASE("boundary immediate list is the documented one") {
  auto b = boundary_immediates();
  REQUIRE(b.size() == 12);
  CHECK(b[0] == 0x00);
  CHECK(std::find(b.begin(), b.end(), 0xFF) != b.end());
  CHECK(std::find(b.begin(), b.end(), 0x80000000ull) != b.end());
  CHECK(std::find(b.begin(), b.end(), 0x7FFFFFFFull) != b.end());
  CHECK(std::find(b.begin(), b.end(), 0xFFFFFFFFFFFFFFFFull) != b.end());
}

TEST_CASE("lifecycle ports and halt sentinel") {
  MachineEnv env;
  env.map_region(kScratchBase, kScratchEnd - kScratchBase);
  env.write(0x20000, 8, 7);
  env.write(0x20000, 8, 9);
  env.write(0x20008, 8, 9);
  REQUIRE(env.lifecycle.size() == 3);
  CHECK(env.lifecycle[0].construct);
  CHECK(env.lifecycle[2].tag == 9);
  CHECK(env.lifecycle_counter() == 1);
  env.write(0x20008, 8, 7);
  CHECK(env.lifecycle_counter() == 0);
}
