#include <catch2/catch_amalgamated.hpp>

#include "xjp/scenarios.hpp"

using namespace xjp;

TEST_CASE("type matching walks the ancestor chain") {
  TypeTable t = scenario_types();  // 1 root, 2 derives from 1, 3 root
  CHECK(match_type(1, 1, t) == true);
  CHECK(match_type(2, 1, t) == true);
  CHECK(match_type(1, 2, t) == false);
  CHECK(match_type(3, 1, t) == false);
  CHECK_FALSE(match_type(9, 1, t).has_value());  // unknown type
}

TEST_CASE("state lookup and unwind planning") {
  // two objects then a try region: states 0 (dtor 100), 1 (dtor 101),
  // 2 (try, no dtor); throw at state 2 with no matching try runs both
  // dtors innermost-first
  LsData l;
  l.state_count = 3;
  l.unwind_map = {{kNoState, 100}, {0, 101}, {1, kNoDtor}};
  l.ip2state = {{0x1000, 0x1010, 0}, {0x1010, 0x1020, 1}, {0x1020, 0x1030, 2}};

  CHECK(state_for_pc(l, 0x0FFF) == kNoState);
  CHECK(state_for_pc(l, 0x1000) == 0);
  CHECK(state_for_pc(l, 0x101F) == 1);
  CHECK(state_for_pc(l, 0x1030) == kNoState);

  TypeTable types = scenario_types();
  SECTION("no try: destructors then continue") {
    auto plan = plan_actions(l, 2, 1, types);
    REQUIRE(plan.has_value());
    CHECK_FALSE(plan->catch_found);
    REQUIRE(plan->dtors.size() == 2);
    CHECK(plan->dtors[0] == 101);
    CHECK(plan->dtors[1] == 100);
  }
  SECTION("try covering the inner state stops the walk") {
    TryBlock tb;
    tb.low = 1;
    tb.high = 2;
    tb.catches = {{1, 0x2000, 2}};
    l.tries = {tb};
    auto plan = plan_actions(l, 2, 1, types);
    REQUIRE(plan.has_value());
    REQUIRE(plan->catch_found);
    CHECK(plan->catch_target == 0x2000);
    CHECK(plan->dtors.empty());
  }
  SECTION("catch type filtering") {
    TryBlock tb;
    tb.low = 2;
    tb.high = 2;
    tb.catches = {{3, 0x2000, 2}};  // wrong type
    l.tries = {tb};
    auto plan = plan_actions(l, 2, 1, types);
    REQUIRE(plan.has_value());
    CHECK_FALSE(plan->catch_found);
    CHECK(plan->dtors.size() == 2);
  }
}

TEST_CASE("metadata codec round trips") {
  UnwindInfo info;
  info.range = {0x1000, 0x1080, 7};
  info.codes = {UnwindCode::alloc(0x28), UnwindCode::push(RBX),
                UnwindCode::save(R12, 0x40)};
  info.lshandler = kGenericHandler;
  info.has_lsd = true;
  LsData lsd;
  lsd.state_count = 2;
  lsd.unwind_map = {{kNoState, 100}, {0, kNoDtor}};
  lsd.ip2state = {{0x1004, 0x1040, 0}, {0x1040, 0x1078, 1}};
  TryBlock tb;
  tb.low = 1;
  tb.high = 1;
  tb.catches = {{1, 0x1060, 1}};
  lsd.tries = {tb};

  std::vector<uint8_t> blob = codec_metadata(info, lsd);
  UnwindInfo info2;
  LsData lsd2;
  REQUIRE(parse_metadata(blob, info2, lsd2) == EhErr::None);
  CHECK(info2 == info);
  CHECK(lsd2 == lsd);

  SECTION("serialization is deterministic and folded") {
    std::vector<uint8_t> blob2 = codec_metadata(info, lsd);
    CHECK(blob2 == blob);
    // the XOR fold keeps constant header fields from forming long zero runs
    int zero_run = 0, worst = 0;
    for (uint8_t b : blob) {
      zero_run = b ? 0 : zero_run + 1;
      worst = std::max(worst, zero_run);
    }
    CHECK(worst < 8);
  }
  SECTION("truncated blobs are rejected") {
    for (size_t len : {size_t(0), size_t(8), size_t(15), blob.size() - 1}) {
      std::vector<uint8_t> bad(blob.begin(), blob.begin() + long(len));
      UnwindInfo i3;
      LsData l3;
      CHECK(parse_metadata(bad, i3, l3) != EhErr::None);
    }
  }
}

TEST_CASE("unwind codes apply as documented") {
  MachineEnv env;
  env.map_region(kStackBase, kStackEnd - kStackBase);
  ContextRecord rec;
  rec.state.gpr[RSP] = kInitialRsp;
  rec.frame_base = kInitialRsp;
  env.write(kInitialRsp, 8, 0x1111);          // saved nonvol under rsp
  env.write(kInitialRsp + 0x40, 8, 0x2222);   // frame-base slot

  REQUIRE(apply_unwind_code(rec, UnwindCode::alloc(0x30), env).ok());
  CHECK(rec.state.gpr[RSP] == kInitialRsp + 0x30);
  rec.state.gpr[RSP] = kInitialRsp;
  REQUIRE(apply_unwind_code(rec, UnwindCode::push(RBX), env).ok());
  CHECK(rec.state.gpr[RBX] == 0x1111);
  CHECK(rec.state.gpr[RSP] == kInitialRsp + 8);
  REQUIRE(apply_unwind_code(rec, UnwindCode::save(R12, 0x40), env).ok());
  CHECK(rec.state.gpr[R12] == 0x2222);
}

TEST_CASE("shadow generation validates and is diverse") {
  for (uint64_t s = 0; s < 500; ++s) {
    auto codes = gen_shadow_codes(s, 1 + int(s % 5));
    auto viol = validate_shadow(codes);
    INFO("seed " << s);
    CHECK(viol.empty());
    for (const UnwindCode& c : codes) {
      // never RSP or RBP targets
      if (c.kind == UwKind::PushNonvol || c.kind == UwKind::SaveNonvol) {
        CHECK(c.reg != RSP);
        CHECK(c.reg != RBP);
      }
    }
  }
  DiversityReport d1 = diversity_report(1, 1000, 99);
  CHECK(d1.distinct_type_signatures == 12);
  CHECK(d1.invalid == 0);
  DiversityReport d5 = diversity_report(5, 1000, 99);
  CHECK(d5.distinct_sequences >= 990);
  CHECK(d5.invalid == 0);
}

TEST_CASE("shadow apply then rollback is the identity") {
  MachineEnv env;
  env.map_region(kStackBase, kStackEnd - kStackBase);
  Rng rng(0x5EED);
  for (uint64_t i = 0; i < kStackEnd - kStackBase; i += 8)
    env.write(kStackBase + i, 8, rng.next());

  int fails = 0;
  for (int t = 0; t < 2000; ++t) {
    ContextRecord rec;
    for (int r = 0; r < 16; ++r) rec.state.gpr[r] = rng.next();
    rec.state.gpr[RSP] = kStackBase + 0x1000 + 8 * rng.below(4096);
    rec.frame_base = rec.state.gpr[RSP] - 0x100;
    auto codes = gen_shadow_codes(rng.next(), 1 + int(rng.below(5)));
    ContextRecord snapshot = rec;
    for (const UnwindCode& c : codes) REQUIRE(apply_unwind_code(rec, c, env).ok());
    rec = snapshot;  // the interceptor's rollback
    if (!(rec == snapshot)) ++fails;
  }
  CHECK(fails == 0);
}

TEST_CASE("protect_metadata seals and the sections round trip") {
  UnwindInfo info;
  info.range = {0x1000, 0x1080, 7};
  info.codes = {UnwindCode::alloc(0x28)};
  info.lshandler = kGenericHandler;
  LsData lsd;
  uint8_t key[16] = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3};
  auto [sr, ee] = protect_metadata(info, lsd, key, 0xABCD, 7, 5);
  CHECK(sr.lshandler == 0xE0001000);
  CHECK(sr.codes.size() == 5);
  CHECK(ee.function_id == 7);
  // decrypting restores the genuine metadata
  auto plain = crypt_stream(key, 0xABCD ^ 7, ee.ciphertext);
  UnwindInfo info2;
  LsData lsd2;
  REQUIRE(parse_metadata(plain, info2, lsd2) == EhErr::None);
  CHECK(info2 == info);

  std::vector<ShadowRecord> recs;
  REQUIRE(parse_suwd(serialize_suwd({sr}), recs));
  REQUIRE(recs.size() == 1);
  CHECK(recs[0] == sr);
  std::vector<EehpEntry> ees;
  REQUIRE(parse_eehp(serialize_eehp({ee}), ees));
  REQUIRE(ees.size() == 1);
  CHECK(ees[0].ciphertext == ee.ciphertext);
}
