// Command-line front end: obfuscate program manifests, run modules,
// verify suites, inspect containers.

#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xjp/verify.hpp"

using namespace xjp;
using nlohmann::json;

namespace {

bool read_file(const std::string& path, std::vector<uint8_t>& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  out.assign(std::istreambuf_iterator<char>(f), {});
  return true;
}

bool read_text(const std::string& path, std::string& out) {
  std::ifstream f(path);
  if (!f) return false;
  std::stringstream ss;
  ss << f.rdbuf();
  out = ss.str();
  return true;
}

bool write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) return false;
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  return bool(f);
}

const char* audit_name(AuditKind k) {
  switch (k) {
    case AuditKind::Throw: return "throw";
    case AuditKind::FrameDispatched: return "frame_dispatched";
    case AuditKind::DestructorRun: return "destructor_run";
    case AuditKind::ShadowApplied: return "shadow_applied";
    case AuditKind::Rollback: return "rollback";
    case AuditKind::Decrypt: return "decrypt";
    case AuditKind::Sanitize: return "sanitize";
    case AuditKind::CatchCommit: return "catch_commit";
  }
  return "?";
}

std::string flags_str(const Flags& f) {
  std::string s;
  s += f.cf ? 'C' : '-';
  s += f.pf ? 'P' : '-';
  s += f.af ? 'A' : '-';
  s += f.zf ? 'Z' : '-';
  s += f.sf ? 'S' : '-';
  s += f.of ? 'O' : '-';
  return s;
}

json state_json(const MachineEnv& env, const RunOutcome& o) {
  json j;
  static const char* kinds[] = {"normal_return", "tail_redirect",
                                "unhandled_exception", "fault"};
  j["outcome"] = kinds[int(o.kind)];
  json regs;
  for (uint8_t r = 0; r < 16; ++r)
    regs[reg_name(r)] = hex_u64(o.final_state.gpr[r]);
  j["registers"] = regs;
  j["rip"] = hex_u64(o.final_state.rip);
  j["flags"] = flags_str(o.final_state.fl);
  uint64_t checksum = 0;
  env.read(kChecksumAddr, 8, checksum);
  j["checksum"] = hex_u64(checksum);
  j["stats"] = {{"steps", o.stats.steps},
                {"dispatches", o.stats.dispatches},
                {"fallbacks", o.stats.fallbacks},
                {"raises", o.stats.raises},
                {"frames_processed", o.stats.frames_processed},
                {"interceptor_calls", o.stats.interceptor_calls}};
  json ac = json::object();
  std::map<std::string, uint64_t> counts;
  for (const AuditEvent& a : env.audit) ++counts[audit_name(a.kind)];
  for (auto& [k, v] : counts) ac[k] = v;
  j["audit_counts"] = ac;
  return j;
}

int cmd_obfuscate(const std::string& in_path, const std::string& out_path,
                  uint64_t seed, int shadow_len, bool no_eh_protect,
                  bool eh_base, const std::string& rules_path) {
  std::string text;
  if (!read_text(in_path, text)) {
    std::fprintf(stderr, "cannot read %s\n", in_path.c_str());
    return 1;
  }
  ManifestParse mp = parse_manifest(text);
  if (!mp.ok) {
    std::fprintf(stderr, "manifest error: %s\n", mp.err.c_str());
    return 1;
  }
  RuleTable custom;
  ObfuscateOptions opt;
  opt.seed = seed;
  opt.shadow_len = shadow_len;
  opt.eh_mode = no_eh_protect ? EhMode::None
                              : (eh_base ? EhMode::Base : EhMode::Shadow);
  if (!rules_path.empty()) {
    std::string rt;
    if (!read_text(rules_path, rt)) {
      std::fprintf(stderr, "cannot read %s\n", rules_path.c_str());
      return 1;
    }
    if (auto err = RuleTable::parse(rt, custom)) {
      std::fprintf(stderr, "rules error: %s\n", err->c_str());
      return 1;
    }
    opt.rules = &custom;
  }
  ObfuscateResult r = obfuscate(mp.manifest, opt);
  if (!r.ok) {
    std::fprintf(stderr, "%s\n", r.err.c_str());
    return 1;
  }
  if (!write_file(out_path, serialize_module(r.mod))) {
    std::fprintf(stderr, "cannot write %s\n", out_path.c_str());
    return 1;
  }
  std::printf("functions protected: %zu\n", r.protected_count);
  std::printf("handlers: %zu\n", r.handler_count);
  std::printf("shadow lengths:");
  for (int l : r.shadow_lengths) std::printf(" %d", l);
  std::printf("\n");
  return 0;
}

int cmd_run(const std::string& path, const std::string& manifest_path,
            const std::string& entry_arg, bool trace, uint64_t max_steps) {
  std::vector<uint8_t> bytes;
  if (!read_file(path, bytes)) {
    std::fprintf(stderr, "cannot read %s\n", path.c_str());
    return 1;
  }
  bool is_module = bytes.size() >= 4 && bytes[0] == 'X' && bytes[1] == 'J' &&
                   bytes[2] == 'P' && bytes[3] == 'M';

  ProgramManifest manifest;
  ProtectedModule mod;
  if (is_module) {
    auto pr = parse_module(bytes);
    if (!pr.ok()) {
      std::fprintf(stderr, "module parse: %s\n", mod_err_name(pr.err));
      return 1;
    }
    mod = std::move(pr.mod);
    if (manifest_path.empty()) {
      std::fprintf(stderr,
                   "a module carries no native images; pass --manifest\n");
      return 1;
    }
    std::string text;
    if (!read_text(manifest_path, text)) {
      std::fprintf(stderr, "cannot read %s\n", manifest_path.c_str());
      return 1;
    }
    ManifestParse p = parse_manifest(text);
    if (!p.ok) {
      std::fprintf(stderr, "manifest error: %s\n", p.err.c_str());
      return 1;
    }
    manifest = std::move(p.manifest);
  } else {
    ManifestParse p = parse_manifest(std::string(bytes.begin(), bytes.end()));
    if (!p.ok) {
      std::fprintf(stderr, "manifest error: %s\n", p.err.c_str());
      return 1;
    }
    manifest = std::move(p.manifest);
  }

  uint64_t entry = 0;
  std::string entry_name = entry_arg.empty() ? manifest.entry : entry_arg;
  if (const ManifestFn* f = manifest.by_name(entry_name)) {
    entry = f->addr;
  } else if (entry_name.rfind("0x", 0) == 0) {
    entry = std::stoull(entry_name, nullptr, 16);
  } else {
    std::fprintf(stderr, "entry not found: %s\n", entry_name.c_str());
    return 1;
  }

  MachineEnv env;
  env.map_region(kScratchBase, kScratchEnd - kScratchBase);
  env.map_region(kStackBase, kStackEnd - kStackBase);
  load_manifest_images(manifest, env);

  MetadataRegistry reg;
  reg.types = manifest.types;
  if (is_module) {
    bool ok = (mod.flags & kFlagEhProtected) ? reg.load_shadow_module(mod)
                                             : reg.load_base_module(mod);
    if (!ok) {
      std::fprintf(stderr, "module metadata sections failed to load\n");
      return 1;
    }
  } else {
    for (const ManifestFn& f : manifest.functions)
      if (f.has_metadata) reg.add_plain(f.info, f.lsd);
  }

  MachineState s0;
  s0.gpr[RSP] = kInitialRsp;
  RunOutcome o = run_process(env, is_module ? &mod : nullptr, &reg, entry, s0,
                             max_steps);
  std::printf("%s\n", state_json(env, o).dump(2).c_str());
  bool failed = o.kind == RunOutcome::Kind::Fault ||
                o.kind == RunOutcome::Kind::ExceptionRaised;
  if (trace || failed) {
    size_t n = env.audit.size();
    size_t from = trace ? 0 : (n > 20 ? n - 20 : 0);
    for (size_t i = from; i < n; ++i)
      std::fprintf(stderr, "event %zu: %s %s %s\n", i,
                   audit_name(env.audit[i].kind), hex_u64(env.audit[i].a).c_str(),
                   hex_u64(env.audit[i].b).c_str());
  }
  if (failed && !o.err.ok())
    std::fprintf(stderr, "error kind %d at %s\n", int(o.err.kind),
                 hex_u64(o.err.addr).c_str());
  return failed ? 2 : 0;
}

int cmd_verify(const std::string& suite, int64_t cases, uint64_t seed) {
  std::vector<SuiteReport> reps;
  if (suite == "isa" || suite == "all")
    reps.push_back(run_isa_suite(cases < 0 ? 1000 : uint64_t(cases), seed));
  if (suite == "program" || suite == "all")
    reps.push_back(run_program_suite(cases < 0 ? 50 : uint64_t(cases), seed));
  if (suite == "eh" || suite == "all")
    reps.push_back(run_eh_suite(cases < 0 ? 3 : uint64_t(cases), seed));
  if (suite == "shadow" || suite == "all")
    reps.push_back(run_shadow_suite(cases < 0 ? 1000 : uint64_t(cases), seed));
  if (reps.empty()) {
    std::fprintf(stderr, "unknown suite: %s\n", suite.c_str());
    return 1;
  }
  json j;
  j["suites"] = json::array();
  bool all_pass = true;
  for (const SuiteReport& r : reps) {
    all_pass = all_pass && r.pass();
    json js = {{"suite", r.suite},
               {"cases", r.cases},
               {"failures", r.failures},
               {"details", r.details}};
    if (r.suite == "isa") {
      js["dispatches"] = r.extra_a;
      js["fallbacks"] = r.extra_b;
    } else if (r.suite == "program") {
      js["jump_table_cases"] = r.extra_a;
      js["dispatches"] = r.extra_b;
    } else if (r.suite == "shadow") {
      js["len1_type_signatures"] = r.extra_a;
      js["len5_distinct_sequences"] = r.extra_b;
    }
    j["suites"].push_back(js);
  }
  j["pass"] = all_pass;
  std::printf("%s\n", j.dump(2).c_str());
  return all_pass ? 0 : 1;
}

int cmd_inspect(const std::string& path, const std::string& leak_manifest) {
  std::vector<uint8_t> bytes;
  if (!read_file(path, bytes)) {
    std::fprintf(stderr, "cannot read %s\n", path.c_str());
    return 1;
  }
  auto pr = parse_module(bytes);
  if (!pr.ok()) {
    std::fprintf(stderr, "module parse: %s\n", mod_err_name(pr.err));
    return 1;
  }
  const ProtectedModule& m = pr.mod;
  std::printf("container: XJPM version %u, flags 0x%04x%s\n", m.version,
              m.flags,
              (m.flags & kFlagEhProtected) ? " (eh-protected)" : "");
  std::printf("nonces: bytecode %s, eh %s\n", hex_u64(m.bytecode_nonce).c_str(),
              hex_u64(m.eh_nonce).c_str());
  std::printf("sections: HTAB %zu handlers, BYTC %zu bytes (encrypted, not "
              "shown), FMAP %zu functions, SUWD %zu bytes, EEHP %zu bytes "
              "(encrypted, not shown)\n",
              m.table.size(), m.bytecode_cipher.size(), m.functions.size(),
              m.suwd.size(), m.eehp.size());

  std::printf("handler table:\n");
  for (const HandlerDesc& h : m.table.handlers)
    std::printf("  %3u: %s w%u\n", h.id, vop_name(h.op), h.width);

  std::vector<ShadowRecord> recs;
  bool have_suwd = !m.suwd.empty() && parse_suwd(m.suwd, recs);
  std::printf("function map:\n");
  for (const FunctionMapEntry& f : m.functions) {
    const ShadowRecord* sr = nullptr;
    for (const ShadowRecord& r : recs)
      if (r.range.function_id == f.function_id) sr = &r;
    std::printf("  fid %llu at %s range [%s, %s) entry cell %u",
                (unsigned long long)f.function_id,
                hex_u64(f.entry_address).c_str(),
                hex_u64(f.range.start_pc).c_str(),
                hex_u64(f.range.end_pc).c_str(), f.entry_cell);
    if (sr) std::printf(" lshandler %s", hex_u64(sr->lshandler).c_str());
    std::printf("\n");
  }
  if (have_suwd) {
    std::printf("shadow records:\n");
    for (const ShadowRecord& r : recs) {
      std::printf("  fid %llu:", (unsigned long long)r.range.function_id);
      for (const UnwindCode& c : r.codes) {
        switch (c.kind) {
          case UwKind::AllocSmall:
          case UwKind::AllocLarge:
            std::printf(" alloc(%u)", c.size);
            break;
          case UwKind::PushNonvol:
            std::printf(" push(%s)", reg_name(c.reg));
            break;
          case UwKind::SaveNonvol:
            std::printf(" save(%s,%u)", reg_name(c.reg), c.offset);
            break;
          case UwKind::NopPad:
            std::printf(" nop");
            break;
        }
      }
      std::printf("\n");
    }
  }

  if (!leak_manifest.empty()) {
    std::string text;
    if (!read_text(leak_manifest, text)) {
      std::fprintf(stderr, "cannot read %s\n", leak_manifest.c_str());
      return 1;
    }
    ManifestParse mp = parse_manifest(text);
    if (!mp.ok) {
      std::fprintf(stderr, "manifest error: %s\n", mp.err.c_str());
      return 1;
    }
    LeakReport lr = leak_scan(bytes, mp.manifest);
    if (lr.leaked)
      std::printf("leak check: LEAKED (fid %llu, metadata offset %zu)\n",
                  (unsigned long long)lr.fid, lr.blob_off);
    else
      std::printf("leak check: no leakage\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"virtualizing obfuscator with exception-metadata shadowing"};
  app.require_subcommand(1);

  std::string in_path, out_path, rules_path, manifest_path, entry_arg;
  uint64_t seed = 1, max_steps = 10'000'000;
  int shadow_len = 5;
  bool no_eh_protect = false, eh_base = false, trace = false;
  std::string suite = "all";
  int64_t cases = -1;

  auto* ob = app.add_subcommand("obfuscate", "protect a program manifest");
  ob->add_option("manifest", in_path)->required();
  ob->add_option("out", out_path)->required();
  ob->add_option("--seed", seed);
  ob->add_option("--shadow-len", shadow_len);
  ob->add_flag("--no-eh-protect", no_eh_protect);
  ob->add_flag("--eh-base", eh_base)
      ->description("plaintext metadata payloads, no shadow records");
  ob->add_option("--rules", rules_path);

  auto* rn = app.add_subcommand("run", "execute a module or manifest");
  rn->add_option("path", in_path)->required();
  rn->add_option("--manifest", manifest_path);
  rn->add_option("--entry", entry_arg);
  rn->add_flag("--trace", trace);
  rn->add_option("--max-steps", max_steps);

  auto* vf = app.add_subcommand("verify", "run verification suites");
  vf->add_option("--suite", suite)
      ->check(CLI::IsMember({"isa", "program", "eh", "shadow", "all"}));
  vf->add_option("--cases", cases);
  vf->add_option("--seed", seed);

  auto* in = app.add_subcommand("inspect", "print container structure");
  in->add_option("module", in_path)->required();
  in->add_option("--leak-check", manifest_path);

  CLI11_PARSE(app, argc, argv);

  if (ob->parsed())
    return cmd_obfuscate(in_path, out_path, seed, shadow_len, no_eh_protect,
                         eh_base, rules_path);
  if (rn->parsed())
    return cmd_run(in_path, manifest_path, entry_arg, trace, max_steps);
  if (vf->parsed()) return cmd_verify(suite, cases, seed);
  return cmd_inspect(in_path, manifest_path);
}
