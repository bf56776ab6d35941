#pragma once

#include <string>
#include <vector>

#include "xjp/manifest.hpp"

// Verification suites shared by the command-line front end and the
// acceptance tests.

namespace xjp {

struct SuiteReport {
  std::string suite;
  uint64_t cases = 0;
  uint64_t failures = 0;
  std::vector<std::string> details;  // first few failure descriptions
  uint64_t extra_a = 0;              // suite-specific counters
  uint64_t extra_b = 0;

  bool pass() const { return failures == 0; }
  void note(std::string d) {
    if (details.size() < 10) details.push_back(std::move(d));
  }
};

inline SuiteReport run_isa_suite(uint64_t cases, uint64_t seed,
                                 const RuleTable& rules = RuleTable::defaults()) {
  SuiteReport rep;
  rep.suite = "isa";
  rep.cases = cases;
  for (uint64_t i = 0; i < cases; ++i) {
    CaseProgram cp = gen_isa_case(seed, i);
    DiffVerdict v = differential_check(cp, rules, sub_seed(seed, "mod", i));
    rep.extra_a += v.stats.dispatches;
    rep.extra_b += v.stats.fallbacks;
    if (!v.pass) {
      ++rep.failures;
      rep.note("isa case " + std::to_string(i) + " (" +
               std::string(op_name(cp.opcode)) + "): " + v.detail);
    }
  }
  return rep;
}

inline SuiteReport run_program_suite(uint64_t cases, uint64_t seed,
                                     const RuleTable& rules = RuleTable::defaults()) {
  SuiteReport rep;
  rep.suite = "program";
  rep.cases = cases;
  for (uint64_t i = 0; i < cases; ++i) {
    CaseProgram cp = gen_program_case(seed, i);
    if (cp.has_jump_table) ++rep.extra_a;
    DiffVerdict v = differential_check(cp, rules, sub_seed(seed, "mod", i));
    rep.extra_b += v.stats.dispatches;
    if (!v.pass) {
      ++rep.failures;
      rep.note("program case " + std::to_string(i) + ": " + v.detail);
    }
  }
  return rep;
}

inline SuiteReport run_eh_suite(uint64_t repeats, uint64_t seed) {
  SuiteReport rep;
  rep.suite = "eh";
  std::vector<EhScenario> scs = build_eh_scenarios();
  for (const EhScenario& sc : scs) {
    for (uint64_t r = 0; r < repeats; ++r) {
      ScenarioResult ref;
      for (EhConfig cfg : {EhConfig::Unprotected, EhConfig::Base, EhConfig::Shadow}) {
        ++rep.cases;
        ScenarioResult sr = run_scenario(sc, cfg, sub_seed(seed, "rep", r));
        if (!sr.pass) {
          ++rep.failures;
          rep.note(sc.name + " [" + eh_config_name(cfg) + "]: " + sr.detail);
          continue;
        }
        if (cfg == EhConfig::Unprotected) {
          ref = std::move(sr);
          continue;
        }
        // observables must match the unprotected reference exactly
        bool same = ref.final_state.gpr == sr.final_state.gpr &&
                    ref.final_state.rip == sr.final_state.rip &&
                    ref.final_state.fl == sr.final_state.fl &&
                    ref.lifecycle.size() == sr.lifecycle.size() &&
                    ref.frames_per_raise == sr.frames_per_raise;
        for (size_t i = 0; same && i < ref.lifecycle.size(); ++i)
          same = ref.lifecycle[i].construct == sr.lifecycle[i].construct &&
                 ref.lifecycle[i].tag == sr.lifecycle[i].tag;
        if (!same) {
          ++rep.failures;
          rep.note(sc.name + " [" + eh_config_name(cfg) +
                   "]: observables differ from unprotected run");
        }
      }
    }
  }
  return rep;
}

inline SuiteReport run_shadow_suite(uint64_t samples, uint64_t seed) {
  SuiteReport rep;
  rep.suite = "shadow";
  rep.cases = samples * 2;
  DiversityReport d1 = diversity_report(1, samples, sub_seed(seed, "len1"));
  DiversityReport d5 = diversity_report(5, samples, sub_seed(seed, "len5"));
  rep.extra_a = d1.distinct_type_signatures;
  rep.extra_b = d5.distinct_sequences;
  if (d1.invalid || d5.invalid) {
    ++rep.failures;
    rep.note("invalid sequences: " + std::to_string(d1.invalid + d5.invalid));
  }
  if (samples >= 1000) {
    if (d1.distinct_type_signatures != kShadowTypeCount) {
      ++rep.failures;
      rep.note("length-1 type signatures: " +
               std::to_string(d1.distinct_type_signatures) + ", expected " +
               std::to_string(int(kShadowTypeCount)));
    }
    if (d5.distinct_sequences < samples * 99 / 100) {
      ++rep.failures;
      rep.note("length-5 distinct sequences: " +
               std::to_string(d5.distinct_sequences) + "/" +
               std::to_string(samples));
    }
  }
  return rep;
}

}  // namespace xjp
