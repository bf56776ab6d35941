#include <catch2/catch_amalgamated.hpp>

#include "xjp/manifest.hpp"

using namespace xjp;

namespace {

ProgramManifest scenario_manifest(size_t index = 0) {
  return manifest_from_scenario(build_eh_scenarios()[index]);
}

}  // namespace

TEST_CASE("manifest JSON round trips exactly") {
  ProgramManifest m = scenario_manifest();
  std::string text = manifest_to_json(m).dump(2);
  ManifestParse p = parse_manifest(text);
  INFO(p.err);
  REQUIRE(p.ok);
  REQUIRE(p.manifest.functions.size() == m.functions.size());
  CHECK(p.manifest.entry == m.entry);
  CHECK(p.manifest.protect == m.protect);
  for (size_t i = 0; i < m.functions.size(); ++i) {
    const ManifestFn &a = m.functions[i], &b = p.manifest.functions[i];
    CHECK(a.code == b.code);
    CHECK(a.fid == b.fid);
    CHECK(a.addr == b.addr);
    CHECK(a.has_metadata == b.has_metadata);
    if (a.has_metadata) {
      CHECK(a.info == b.info);
      CHECK(a.lsd == b.lsd);
    }
  }
}

TEST_CASE("manifest parse rejections") {
  ProgramManifest m = scenario_manifest();
  auto dump = [&] { return manifest_to_json(m).dump(); };

  SECTION("not JSON") { CHECK_FALSE(parse_manifest("{nope").ok); }
  SECTION("no functions key") { CHECK_FALSE(parse_manifest("{}").ok); }
  SECTION("bad hex") {
    nlohmann::json j = manifest_to_json(m);
    j["functions"][0]["code"] = "zz";
    CHECK_FALSE(parse_manifest(j.dump()).ok);
  }
  SECTION("duplicate function id") {
    m.functions[1].fid = m.functions[0].fid;
    CHECK_FALSE(parse_manifest(dump()).ok);
  }
  SECTION("overlapping ranges") {
    m.functions[1].addr = m.functions[0].addr + 1;
    CHECK_FALSE(parse_manifest(dump()).ok);
  }
  SECTION("unknown entry") {
    m.entry = "nonesuch";
    CHECK_FALSE(parse_manifest(dump()).ok);
  }
  SECTION("protect names a missing function") {
    m.protect.push_back("nonesuch");
    CHECK_FALSE(parse_manifest(dump()).ok);
  }
}

TEST_CASE("obfuscation is deterministic per seed") {
  ProgramManifest m = scenario_manifest();
  ObfuscateOptions opt;
  opt.seed = 42;
  ObfuscateResult a = obfuscate(m, opt), b = obfuscate(m, opt);
  REQUIRE(a.ok);
  CHECK(serialize_module(a.mod) == serialize_module(b.mod));
  opt.seed = 43;
  ObfuscateResult c = obfuscate(m, opt);
  REQUIRE(c.ok);
  CHECK(serialize_module(a.mod) != serialize_module(c.mod));
}

TEST_CASE("shadowed modules leak nothing, plaintext baselines do") {
  ProgramManifest m = scenario_manifest();
  ObfuscateOptions opt;
  opt.seed = 7;

  opt.eh_mode = EhMode::Shadow;
  ObfuscateResult shadow = obfuscate(m, opt);
  REQUIRE(shadow.ok);
  CHECK((shadow.mod.flags & kFlagEhProtected) != 0);
  CHECK_FALSE(leak_scan(serialize_module(shadow.mod), m).leaked);
  // every shadow record presents the interceptor as its handler
  CHECK_FALSE(shadow.mod.suwd.empty());
  std::vector<ShadowRecord> recs;
  REQUIRE(parse_suwd(shadow.mod.suwd, recs));
  for (const ShadowRecord& sr : recs) CHECK(sr.lshandler == 0xE0001000);

  opt.eh_mode = EhMode::Base;
  ObfuscateResult base = obfuscate(m, opt);
  REQUIRE(base.ok);
  CHECK(leak_scan(serialize_module(base.mod), m).leaked);

  opt.eh_mode = EhMode::None;
  ObfuscateResult none = obfuscate(m, opt);
  REQUIRE(none.ok);
  CHECK((none.mod.flags & kFlagEhProtected) == 0);
  CHECK(none.mod.suwd.empty());
  CHECK(none.mod.eehp.empty());
}

TEST_CASE("obfuscation reports what it protected") {
  ProgramManifest m = scenario_manifest();
  ObfuscateOptions opt;
  opt.shadow_len = 3;
  ObfuscateResult r = obfuscate(m, opt);
  REQUIRE(r.ok);
  CHECK(r.protected_count == m.functions.size());
  CHECK(r.handler_count == r.mod.table.handlers.size());
  for (int len : r.shadow_lengths) CHECK(len == 3);
}
