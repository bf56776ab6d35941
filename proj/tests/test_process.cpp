#include <catch2/catch_amalgamated.hpp>

#include "xjp/scenarios.hpp"

using namespace xjp;

TEST_CASE("every scenario passes under all three configurations") {
  for (const EhScenario& sc : build_eh_scenarios()) {
    for (EhConfig cfg :
         {EhConfig::Unprotected, EhConfig::Base, EhConfig::Shadow}) {
      ScenarioResult r = run_scenario(sc, cfg, 0x1001);
      INFO(sc.name << " / " << eh_config_name(cfg) << ": " << r.detail);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("configurations agree on every observable") {
  for (const EhScenario& sc : build_eh_scenarios()) {
    ScenarioResult ref = run_scenario(sc, EhConfig::Unprotected, 0x2002);
    REQUIRE(ref.pass);
    for (EhConfig cfg : {EhConfig::Base, EhConfig::Shadow}) {
      ScenarioResult r = run_scenario(sc, cfg, 0x2002);
      INFO(sc.name << " / " << eh_config_name(cfg) << ": " << r.detail);
      REQUIRE(r.pass);
      for (int g = 0; g < 16; ++g)
        CHECK(r.final_state.gpr[g] == ref.final_state.gpr[g]);
      CHECK(r.final_state.rip == ref.final_state.rip);
      CHECK(r.final_state.fl == ref.final_state.fl);
      REQUIRE(r.lifecycle.size() == ref.lifecycle.size());
      for (size_t i = 0; i < r.lifecycle.size(); ++i) {
        CHECK(r.lifecycle[i].construct == ref.lifecycle[i].construct);
        CHECK(r.lifecycle[i].tag == ref.lifecycle[i].tag);
      }
      CHECK(r.frames_per_raise == ref.frames_per_raise);
    }
  }
}

TEST_CASE("shadow runs are deterministic per seed") {
  const EhScenario sc = build_eh_scenarios()[0];
  ScenarioResult a = run_scenario(sc, EhConfig::Shadow, 7);
  ScenarioResult b = run_scenario(sc, EhConfig::Shadow, 7);
  REQUIRE(a.pass);
  REQUIRE(b.pass);
  CHECK(a.stats.steps == b.stats.steps);
  CHECK(a.stats.dispatches == b.stats.dispatches);
  CHECK(a.stats.interceptor_calls == b.stats.interceptor_calls);
  for (int g = 0; g < 16; ++g)
    CHECK(a.final_state.gpr[g] == b.final_state.gpr[g]);
}

TEST_CASE("interceptor engages only on shadowed frames") {
  const EhScenario sc = build_eh_scenarios()[0];
  CHECK(run_scenario(sc, EhConfig::Unprotected, 3).stats.interceptor_calls == 0);
  CHECK(run_scenario(sc, EhConfig::Base, 3).stats.interceptor_calls == 0);
  CHECK(run_scenario(sc, EhConfig::Shadow, 3).stats.interceptor_calls > 0);
}

TEST_CASE("call chains dispatch one frame per depth") {
  for (int depth = 0; depth <= 7; ++depth) {
    EhScenario sc = make_chain_scenario(depth);
    for (EhConfig cfg :
         {EhConfig::Unprotected, EhConfig::Base, EhConfig::Shadow}) {
      ScenarioResult r = run_scenario(sc, cfg, 0x3000 + uint64_t(depth));
      INFO(sc.name << " / " << eh_config_name(cfg) << ": " << r.detail);
      REQUIRE(r.pass);
      REQUIRE(r.frames_per_raise.size() == 1);
      CHECK(r.frames_per_raise[0] == uint64_t(depth) + 1);
      if (cfg == EhConfig::Shadow)
        // every protected frame crossed triggers exactly one interception
        CHECK(r.stats.interceptor_calls == uint64_t(depth) + 1);
      else
        CHECK(r.stats.interceptor_calls == 0);
    }
  }
}

TEST_CASE("each decrypt is matched by a sanitize") {
  for (const EhScenario& sc : build_eh_scenarios()) {
    ScenarioResult r = run_scenario(sc, EhConfig::Shadow, 0x4004);
    INFO(sc.name << ": " << r.detail);
    REQUIRE(r.pass);
    CHECK(r.decrypts > 0);
    CHECK(r.sanitizes == r.decrypts);
  }
}

TEST_CASE("lifecycle balance holds in every scenario") {
  for (const EhScenario& sc : build_eh_scenarios()) {
    ScenarioResult r = run_scenario(sc, EhConfig::Shadow, 0x5005);
    REQUIRE(r.pass);
    int live = 0;
    for (const auto& [construct, tag] : r.lifecycle) {
      live += construct ? 1 : -1;
      CHECK(live >= 0);
    }
    CHECK(live == 0);
  }
}
