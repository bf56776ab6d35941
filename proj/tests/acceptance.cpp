// End-to-end acceptance gate. Prints one verdict line per criterion and
// exits nonzero if any fails. Run via ctest or directly.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <string>
#include <unordered_set>

#include "xjp/verify.hpp"

using namespace xjp;

namespace {

int failures = 0;

void verdict(int n, bool pass, const std::string& detail) {
  std::printf("ACCEPTANCE %d: %s %s\n", n, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// criterion 1: instruction-level differentials at full scale
void criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  const uint64_t n = 100000;
  std::set<Op> seen;
  for (uint64_t i = 0; i < 512; ++i) seen.insert(gen_isa_case(11, i).opcode);
  SuiteReport rep = run_isa_suite(n, 11);
  double secs = seconds_since(t0);
  bool pass = rep.pass() && seen.size() == 42 && secs < 300.0;
  std::string d = fmt("%llu cases, %zu/42 opcodes, %llu failures, %.1fs",
                      (unsigned long long)n, seen.size(),
                      (unsigned long long)rep.failures, secs);
  if (!rep.details.empty()) d += " | " + rep.details[0];
  verdict(1, pass, d);
}

// criterion 2: program-level differentials with jump-table coverage
void criterion2() {
  auto t0 = std::chrono::steady_clock::now();
  const uint64_t n = 200;
  SuiteReport rep = run_program_suite(n, 22);
  double secs = seconds_since(t0);
  bool pass = rep.pass() && rep.extra_a * 10 >= n && secs < 300.0;
  std::string d = fmt("%llu programs, %llu with jump tables, %llu failures, %.1fs",
                      (unsigned long long)n, (unsigned long long)rep.extra_a,
                      (unsigned long long)rep.failures, secs);
  if (!rep.details.empty()) d += " | " + rep.details[0];
  verdict(2, pass, d);
}

// criterion 3: eight scenarios, three configurations, ten repeats
void criterion3() {
  SuiteReport once = run_eh_suite(1, 33);
  SuiteReport reps = run_eh_suite(10, 33);
  bool pass = once.pass() && once.cases == 24 && reps.pass() &&
              reps.cases == 240;
  std::string d = fmt("%llu/24 single runs, %llu/240 repeated runs clean",
                      (unsigned long long)(once.cases - once.failures),
                      (unsigned long long)(reps.cases - reps.failures));
  if (!once.details.empty()) d += " | " + once.details[0];
  else if (!reps.details.empty()) d += " | " + reps.details[0];
  verdict(3, pass, d);
}

// criterion 4: shadow diversity at the published sample size
void criterion4() {
  DiversityReport d1 = diversity_report(1, 1000, 44);
  DiversityReport d5 = diversity_report(5, 1000, 45);
  bool pass = d1.distinct_type_signatures == 12 && d1.invalid == 0 &&
              d5.distinct_sequences >= 990 && d5.invalid == 0;
  verdict(4, pass,
          fmt("len1: %d type signatures (want 12), len5: %d/1000 distinct "
              "(want >=990), invalid %d+%d",
              d1.distinct_type_signatures, d5.distinct_sequences, d1.invalid,
              d5.invalid));
}

// criterion 5: shadowed containers leak no metadata, baselines must
void criterion5() {
  size_t shadow_checked = 0, base_checked = 0, lshandlers = 0;
  std::string fail;
  for (const EhScenario& sc : build_eh_scenarios()) {
    ProgramManifest m = manifest_from_scenario(sc);
    ObfuscateOptions opt;
    opt.seed = 55;

    opt.eh_mode = EhMode::Shadow;
    ObfuscateResult shadow = obfuscate(m, opt);
    if (!shadow.ok) {
      fail = sc.name + ": " + shadow.err;
      break;
    }
    if (leak_scan(serialize_module(shadow.mod), m).leaked) {
      fail = sc.name + ": shadow module leaks metadata";
      break;
    }
    std::vector<ShadowRecord> recs;
    if (!parse_suwd(shadow.mod.suwd, recs)) {
      fail = sc.name + ": bad shadow section";
      break;
    }
    for (const ShadowRecord& sr : recs) {
      if (sr.lshandler != 0xE0001000) {
        fail = sc.name + ": handler field is not the interceptor";
        break;
      }
      ++lshandlers;
    }
    ++shadow_checked;

    opt.eh_mode = EhMode::Base;
    ObfuscateResult base = obfuscate(m, opt);
    if (!base.ok || !leak_scan(serialize_module(base.mod), m).leaked) {
      fail = sc.name + ": baseline module failed to leak";
      break;
    }
    ++base_checked;
  }
  verdict(5, fail.empty(),
          fail.empty()
              ? fmt("%zu shadow modules clean (%zu handler fields), "
                    "%zu baselines leak as expected",
                    shadow_checked, lshandlers, base_checked)
              : fail);
}

// criterion 6: rollback of shadow effects is exact
void criterion6() {
  MachineEnv env;
  env.map_region(kStackBase, kStackEnd - kStackBase);
  Rng rng(66);
  for (uint64_t i = 0; i < kStackEnd - kStackBase; i += 8)
    env.write(kStackBase + i, 8, rng.next());
  int bad = 0;
  for (int t = 0; t < 10000; ++t) {
    ContextRecord rec;
    for (int r = 0; r < 16; ++r) rec.state.gpr[r] = rng.next();
    rec.state.gpr[RSP] = kStackBase + 0x1000 + 8 * rng.below(4096);
    rec.frame_base = rec.state.gpr[RSP] - 0x100;
    ContextRecord snapshot = rec;
    for (const UnwindCode& c :
         gen_shadow_codes(rng.next(), 1 + int(rng.below(5))))
      if (!apply_unwind_code(rec, c, env).ok()) ++bad;
    rec = snapshot;
    if (!(rec.state == snapshot.state && rec.frame_base == snapshot.frame_base))
      ++bad;
  }
  verdict(6, bad == 0, fmt("10000 apply/rollback pairs, %d mismatches", bad));
}

// criterion 7: frame counts grow linearly with depth
void criterion7() {
  std::string fail;
  for (int depth = 0; depth <= 7 && fail.empty(); ++depth) {
    EhScenario sc = make_chain_scenario(depth);
    for (EhConfig cfg :
         {EhConfig::Unprotected, EhConfig::Base, EhConfig::Shadow}) {
      ScenarioResult r = run_scenario(sc, cfg, 77);
      if (!r.pass) {
        fail = fmt("depth %d [%s]: %s", depth, eh_config_name(cfg),
                   r.detail.c_str());
        break;
      }
      if (r.frames_per_raise.size() != 1 ||
          r.frames_per_raise[0] != uint64_t(depth) + 1) {
        fail = fmt("depth %d [%s]: frames %llu, want %d", depth,
                   eh_config_name(cfg),
                   (unsigned long long)(r.frames_per_raise.empty()
                                            ? 0
                                            : r.frames_per_raise[0]),
                   depth + 1);
        break;
      }
      uint64_t want_icalls = cfg == EhConfig::Shadow ? uint64_t(depth) + 1 : 0;
      if (r.stats.interceptor_calls != want_icalls) {
        fail = fmt("depth %d [%s]: interceptor calls %llu, want %llu", depth,
                   eh_config_name(cfg),
                   (unsigned long long)r.stats.interceptor_calls,
                   (unsigned long long)want_icalls);
        break;
      }
    }
  }
  verdict(7, fail.empty(),
          fail.empty() ? "depths 0-7: frames = depth+1, interceptions = "
                         "protected frames crossed"
                       : fail);
}

// criterion 8: handler minimality, container identity, tamper detection
void criterion8() {
  std::string fail;
  ProgramManifest m = manifest_from_scenario(build_eh_scenarios()[0]);
  ObfuscateOptions opt;
  opt.seed = 88;
  ObfuscateResult r = obfuscate(m, opt);
  if (!r.ok) fail = r.err;

  if (fail.empty()) {
    // minimality: every table entry is referenced by some bytecode cell,
    // except the mandatory fallback/exit pair
    std::unordered_set<uint16_t> used;
    MachineEnv env;
    load_manifest_images(m, env);
    std::set<uint64_t> nonret;
    std::vector<VmirFunction> fns;
    for (const ManifestFn& f : m.functions) {
      CfgResult cr =
          recover_function(env, {f.addr, f.addr + f.code.size(), f.fid}, nonret);
      auto xr = translate_function(cr.cfg, RuleTable::defaults(), env);
      fns.push_back(std::move(xr.fn));
    }
    std::unordered_set<int> referenced;
    for (const VmirFunction& f : fns)
      for (const VmirBlock& b : f.blocks)
        for (const VmirInst& i : b.insts) referenced.insert(int(i.op));
    referenced.insert(int(VOp::VNATIVE));
    referenced.insert(int(VOp::VEXIT));
    for (const HandlerDesc& h : r.mod.table.handlers)
      if (!referenced.count(int(h.op))) {
        fail = fmt("handler table carries unreferenced %s", vop_name(h.op));
        break;
      }
  }
  if (fail.empty()) {
    std::vector<uint8_t> bytes = serialize_module(r.mod);
    auto pr = parse_module(bytes);
    if (!pr.ok() || serialize_module(pr.mod) != bytes)
      fail = "container round trip not byte-identical";
    else if (validate_module(pr.mod) != ModErr::None)
      fail = "fresh module fails validation";
  }
  int detected = 0;
  if (fail.empty()) {
    Rng rng(888);
    for (int t = 0; t < 100; ++t) {
      ProtectedModule tampered = r.mod;
      size_t pos = size_t(rng.below(tampered.bytecode_cipher.size()));
      tampered.bytecode_cipher[pos] ^= uint8_t(1 + rng.below(255));
      if (validate_module(tampered) == ModErr::ValidationFailure) ++detected;
    }
    if (detected != 100)
      fail = fmt("tamper detection caught %d/100 flips", detected);
  }
  verdict(8, fail.empty(),
          fail.empty() ? "table minimal, round trip identical, 100/100 "
                         "tampers detected"
                       : fail);
}

// criterion 9: removing a rule forces the native fallback path
void criterion9() {
  RuleTable rules = rules_without(Op::ADD);
  SuiteReport rep = run_isa_suite(2000, 99, rules);
  bool pass = rep.pass() && rep.extra_b > 0;
  std::string d = fmt("2000 cases without the add rule: %llu failures, "
                      "%llu fallback executions",
                      (unsigned long long)rep.failures,
                      (unsigned long long)rep.extra_b);
  if (!rep.details.empty()) d += " | " + rep.details[0];
  verdict(9, pass, d);
}

// criterion 10: one sanitize per decrypt, across every scenario
void criterion10() {
  std::string fail;
  uint64_t decrypts = 0;
  for (const EhScenario& sc : build_eh_scenarios()) {
    for (uint64_t rep = 0; rep < 10 && fail.empty(); ++rep) {
      ScenarioResult r = run_scenario(sc, EhConfig::Shadow, 100 + rep);
      if (!r.pass) {
        fail = sc.name + ": " + r.detail;
      } else if (r.decrypts == 0 || r.sanitizes != r.decrypts) {
        fail = fmt("%s: %zu decrypts, %zu sanitizes", sc.name.c_str(),
                   r.decrypts, r.sanitizes);
      }
      decrypts += r.decrypts;
    }
  }
  verdict(10, fail.empty(),
          fail.empty() ? fmt("%llu decrypts, each matched by one sanitize",
                             (unsigned long long)decrypts)
                       : fail);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  if (failures) {
    std::printf("ACCEPTANCE: %d criteria FAILED\n", failures);
    return 1;
  }
  std::printf("ACCEPTANCE: all 10 criteria passed\n");
  return 0;
}
