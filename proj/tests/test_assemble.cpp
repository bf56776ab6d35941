#include <catch2/catch_amalgamated.hpp>

#include "xjp/harness.hpp"

using namespace xjp;

namespace {

// one small assembled module shared by the container tests
AssembleResult small_module(uint64_t seed = 11, bool eh = false) {
  MachineEnv env;
  std::vector<uint8_t> code;
  for (Op op : {Op::MOV, Op::ADD}) {
    Instruction in;
    in.opcode = op;
    in.width = 64;
    in.operands = {Operand::make_reg(RAX), Operand::make_reg(RBX)};
    auto e = encode(in);
    code.insert(code.end(), e->begin(), e->end());
  }
  code.push_back(0xC3);
  env.load_image(1, 0x40000, code);
  CfgResult r = recover_function(env, {0x40000, 0x40000 + code.size(), 1});
  REQUIRE(r.ok());
  auto x = translate_function(r.cfg, RuleTable::defaults(), env);
  REQUIRE(x.ok());
  HandlerTable ht = select_handlers({x.fn});
  uint8_t key[16] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  return assemble_module({{&x.fn, 0x40000}}, ht, {}, {}, key, seed, eh);
}

}  // namespace

TEST_CASE("keystream matches the published recurrence") {
  uint8_t zero_key[16] = {};
  std::vector<uint8_t> zeros(16, 0);
  std::vector<uint8_t> ks = crypt_stream(zero_key, 0, zeros);
  // x1 = 0 * 6364136223846793005 + 1442695040888963407, computed separately
  const uint8_t x1[8] = {0x4f, 0x81, 0x67, 0xf7, 0x7e, 0x7b, 0x05, 0x14};
  const uint8_t x2[8] = {0x32, 0x6d, 0xba, 0x84, 0x11, 0xee, 0x08, 0x1a};
  for (int i = 0; i < 8; ++i) {
    CHECK(ks[i] == x1[i]);
    CHECK(ks[8 + i] == x2[i]);
  }
}

TEST_CASE("crypt_stream is involutive and key-byte-whitened") {
  uint8_t key[16];
  Rng rng(42);
  for (auto& b : key) b = uint8_t(rng.next());
  std::vector<uint8_t> data(100);
  for (auto& b : data) b = uint8_t(rng.next());
  auto once = crypt_stream(key, 0x1234, data);
  CHECK(once != data);
  CHECK(crypt_stream(key, 0x1234, once) == data);
  // different nonce, different stream
  CHECK(crypt_stream(key, 0x1235, data) != once);
}

TEST_CASE("container round trip is byte-identical") {
  AssembleResult ar = small_module();
  REQUIRE(ar.ok());
  std::vector<uint8_t> bytes = serialize_module(ar.mod);
  auto pr = parse_module(bytes);
  REQUIRE(pr.ok());
  CHECK(serialize_module(pr.mod) == bytes);
  CHECK(validate_module(pr.mod) == ModErr::None);
}

TEST_CASE("assembly is deterministic per seed") {
  auto a = small_module(5), b = small_module(5), c = small_module(6);
  REQUIRE(a.ok());
  CHECK(serialize_module(a.mod) == serialize_module(b.mod));
  CHECK(serialize_module(a.mod) != serialize_module(c.mod));
}

TEST_CASE("malformed containers are rejected") {
  std::vector<uint8_t> good = serialize_module(small_module().mod);

  SECTION("bad magic") {
    auto bad = good;
    bad[0] ^= 0xFF;
    CHECK(parse_module(bad).err == ModErr::BadMagic);
  }
  SECTION("bad version") {
    auto bad = good;
    bad[4] = 0x7F;
    CHECK(parse_module(bad).err == ModErr::BadVersion);
  }
  SECTION("truncations") {
    for (size_t len : {size_t(0), size_t(3), size_t(10), size_t(40),
                       good.size() / 2, good.size() - 1}) {
      std::vector<uint8_t> bad(good.begin(), good.begin() + long(len));
      CHECK(parse_module(bad).err != ModErr::None);
    }
  }
  SECTION("section offset past the end") {
    auto bad = good;
    // first section descriptor: 4-byte tag at 44, then u64 offset
    size_t off_pos = 44 + 4;
    for (int i = 0; i < 8; ++i) bad[off_pos + i] = 0xFF;
    CHECK(parse_module(bad).err != ModErr::None);
  }
}

TEST_CASE("single-byte tamper is detected, 100 trials") {
  AssembleResult ar = small_module();
  REQUIRE(ar.ok());
  REQUIRE(validate_module(ar.mod) == ModErr::None);
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    ProtectedModule m = ar.mod;
    size_t pos = size_t(rng.below(m.bytecode_cipher.size()));
    uint8_t delta = uint8_t(1 + rng.below(255));
    m.bytecode_cipher[pos] ^= delta;
    INFO("trial " << t << " pos " << pos);
    CHECK(validate_module(m) == ModErr::ValidationFailure);
  }
}

TEST_CASE("handler table is minimal") {
  AssembleResult ar = small_module();
  REQUIRE(ar.ok());
  // the MOV/ADD/RET function needs loads, stores, adds and a return plus
  // the mandatory pair; nothing else
  for (const HandlerDesc& h : ar.mod.table.handlers) {
    bool used = h.op == VOp::VLOADR || h.op == VOp::VSTORER ||
                h.op == VOp::VADD || h.op == VOp::VRET ||
                h.op == VOp::VNATIVE || h.op == VOp::VEXIT;
    INFO(vop_name(h.op));
    CHECK(used);
  }
}

TEST_CASE("eh flag controls the protected bit") {
  CHECK((small_module(11, true).mod.flags & kFlagEhProtected) != 0);
  CHECK((small_module(11, false).mod.flags & kFlagEhProtected) == 0);
}
