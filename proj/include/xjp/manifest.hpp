#pragma once

#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "xjp/scenarios.hpp"

// Program manifests: the JSON input format for the pipeline (a stand-in for
// a real binary's sections), the obfuscation driver, and the metadata
// leakage scan.

namespace xjp {

struct ManifestFn {
  std::string name;
  uint64_t fid = 0;
  uint64_t addr = 0;
  std::vector<uint8_t> code;
  bool non_returning = false;
  bool has_metadata = false;
  UnwindInfo info;
  LsData lsd;
};

struct ProgramManifest {
  std::vector<ManifestFn> functions;
  TypeTable types;
  std::string entry;
  std::vector<std::string> protect;

  const ManifestFn* by_name(const std::string& n) const {
    for (const auto& f : functions)
      if (f.name == n) return &f;
    return nullptr;
  }
  bool is_protected(const std::string& n) const {
    for (const auto& p : protect)
      if (p == n) return true;
    return false;
  }
};

namespace detail {

inline std::string hex_bytes(const std::vector<uint8_t>& v) {
  static const char* d = "0123456789abcdef";
  std::string s;
  s.reserve(v.size() * 2);
  for (uint8_t b : v) {
    s += d[b >> 4];
    s += d[b & 15];
  }
  return s;
}

inline bool unhex(const std::string& s, std::vector<uint8_t>& out) {
  if (s.size() % 2) return false;
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  out.clear();
  for (size_t i = 0; i < s.size(); i += 2) {
    int hi = nib(s[i]), lo = nib(s[i + 1]);
    if (hi < 0 || lo < 0) return false;
    out.push_back(uint8_t(hi << 4 | lo));
  }
  return true;
}

inline nlohmann::json code_to_json(const UnwindCode& c) {
  nlohmann::json j;
  switch (c.kind) {
    case UwKind::AllocSmall:
    case UwKind::AllocLarge:
      j["kind"] = "alloc";
      j["size"] = c.size;
      break;
    case UwKind::PushNonvol:
      j["kind"] = "push";
      j["reg"] = c.reg;
      break;
    case UwKind::SaveNonvol:
      j["kind"] = "save";
      j["reg"] = c.reg;
      j["offset"] = c.offset;
      break;
    case UwKind::NopPad:
      j["kind"] = "nop";
      break;
  }
  return j;
}

inline bool code_from_json(const nlohmann::json& j, UnwindCode& c) {
  std::string k = j.value("kind", "");
  if (k == "alloc")
    c = UnwindCode::alloc(j.value("size", uint16_t(0)));
  else if (k == "push")
    c = UnwindCode::push(j.value("reg", uint8_t(0)));
  else if (k == "save")
    c = UnwindCode::save(j.value("reg", uint8_t(0)), j.value("offset", uint16_t(0)));
  else if (k == "nop")
    c = UnwindCode{};
  else
    return false;
  return true;
}

inline nlohmann::json metadata_to_json(const UnwindInfo& info, const LsData& lsd) {
  nlohmann::json j;
  j["codes"] = nlohmann::json::array();
  for (const UnwindCode& c : info.codes) j["codes"].push_back(code_to_json(c));
  if (info.has_lsd) {
    nlohmann::json l;
    l["unwind_map"] = nlohmann::json::array();
    for (const UnwindMapEntry& e : lsd.unwind_map) {
      nlohmann::json je;
      je["parent"] = e.parent;
      if (e.dtor != kNoDtor) je["dtor"] = e.dtor;
      l["unwind_map"].push_back(je);
    }
    l["ip2state"] = nlohmann::json::array();
    for (const IpStateRange& r : lsd.ip2state)
      l["ip2state"].push_back({{"start", r.start_pc}, {"end", r.end_pc},
                               {"state", r.state}});
    l["tries"] = nlohmann::json::array();
    for (const TryBlock& t : lsd.tries) {
      nlohmann::json jt;
      jt["low"] = t.low;
      jt["high"] = t.high;
      jt["catches"] = nlohmann::json::array();
      for (const CatchClause& c : t.catches)
        jt["catches"].push_back({{"type", c.type_id}, {"target", c.target_pc},
                                 {"state", c.state}});
      l["tries"].push_back(jt);
    }
    j["lsd"] = std::move(l);
  }
  return j;
}

inline bool metadata_from_json(const nlohmann::json& j, UnwindInfo& info,
                               LsData& lsd) {
  if (!j.is_object()) return false;
  for (const auto& jc : j.value("codes", nlohmann::json::array())) {
    UnwindCode c;
    if (!code_from_json(jc, c)) return false;
    info.codes.push_back(c);
  }
  info.lshandler = kGenericHandler;
  if (j.contains("lsd")) {
    const auto& l = j["lsd"];
    for (const auto& je : l.value("unwind_map", nlohmann::json::array())) {
      UnwindMapEntry e;
      e.parent = je.value("parent", kNoState);
      e.dtor = je.value("dtor", kNoDtor);
      lsd.unwind_map.push_back(e);
    }
    lsd.state_count = int16_t(lsd.unwind_map.size());
    for (const auto& jr : l.value("ip2state", nlohmann::json::array()))
      lsd.ip2state.push_back({jr.value("start", uint64_t(0)),
                              jr.value("end", uint64_t(0)),
                              jr.value("state", kNoState)});
    for (const auto& jt : l.value("tries", nlohmann::json::array())) {
      TryBlock t;
      t.low = jt.value("low", int16_t(0));
      t.high = jt.value("high", int16_t(0));
      for (const auto& jc : jt.value("catches", nlohmann::json::array()))
        t.catches.push_back({jc.value("type", uint32_t(0)),
                             jc.value("target", uint64_t(0)),
                             jc.value("state", kNoState)});
      lsd.tries.push_back(t);
    }
    info.has_lsd = true;
  }
  return true;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const ProgramManifest& m) {
  nlohmann::json j;
  j["functions"] = nlohmann::json::array();
  for (const ManifestFn& f : m.functions) {
    nlohmann::json jf;
    jf["name"] = f.name;
    jf["fid"] = f.fid;
    jf["addr"] = f.addr;
    jf["code"] = detail::hex_bytes(f.code);
    if (f.non_returning) jf["non_returning"] = true;
    if (f.has_metadata) jf["metadata"] = detail::metadata_to_json(f.info, f.lsd);
    j["functions"].push_back(jf);
  }
  j["types"] = nlohmann::json::object();
  for (auto [id, parent] : m.types.parent)
    j["types"][std::to_string(id)] = parent;
  j["entry"] = m.entry;
  j["protect"] = m.protect;
  return j;
}

struct ManifestParse {
  bool ok = false;
  std::string err;
  ProgramManifest manifest;
};

inline ManifestParse parse_manifest(const std::string& text) {
  ManifestParse res;
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    res.err = "not valid JSON";
    return res;
  }
  if (!j.is_object() || !j.contains("functions")) {
    res.err = "missing functions list";
    return res;
  }
  ProgramManifest& m = res.manifest;
  for (const auto& jf : j["functions"]) {
    ManifestFn f;
    f.name = jf.value("name", "");
    f.fid = jf.value("fid", uint64_t(0));
    f.addr = jf.value("addr", uint64_t(0));
    if (f.name.empty() || f.fid == 0) {
      res.err = "function needs a name and a nonzero fid";
      return res;
    }
    if (!detail::unhex(jf.value("code", ""), f.code) || f.code.empty()) {
      res.err = "bad code hex in " + f.name;
      return res;
    }
    f.non_returning = jf.value("non_returning", false);
    if (jf.contains("metadata")) {
      f.info.range = {f.addr, f.addr + f.code.size(), f.fid};
      if (!detail::metadata_from_json(jf["metadata"], f.info, f.lsd)) {
        res.err = "bad metadata in " + f.name;
        return res;
      }
      f.has_metadata = true;
    }
    m.functions.push_back(std::move(f));
  }
  if (j.contains("types"))
    for (auto& [k, v] : j["types"].items())
      m.types.parent[uint32_t(std::stoul(k))] = v.get<uint32_t>();
  m.entry = j.value("entry", "");
  if (j.contains("protect"))
    for (const auto& p : j["protect"]) m.protect.push_back(p.get<std::string>());

  // invariants: entry resolves, protect list resolves, ranges disjoint
  if (!m.entry.empty() && !m.by_name(m.entry)) {
    res.err = "entry function not found: " + m.entry;
    return res;
  }
  for (const auto& p : m.protect)
    if (!m.by_name(p)) {
      res.err = "protect list names unknown function: " + p;
      return res;
    }
  for (size_t i = 0; i < m.functions.size(); ++i)
    for (size_t k = i + 1; k < m.functions.size(); ++k) {
      const ManifestFn &a = m.functions[i], &b = m.functions[k];
      if (a.addr < b.addr + b.code.size() && b.addr < a.addr + a.code.size()) {
        res.err = "overlapping functions: " + a.name + ", " + b.name;
        return res;
      }
      if (a.fid == b.fid) {
        res.err = "duplicate fid in " + a.name + ", " + b.name;
        return res;
      }
    }
  res.ok = true;
  return res;
}

// Scenario fixtures double as manifests: everything is protected.
inline ProgramManifest manifest_from_scenario(const EhScenario& sc) {
  ProgramManifest m;
  for (const ScenFn& f : sc.fns) {
    ManifestFn mf;
    mf.name = f.name;
    mf.fid = f.fid;
    mf.addr = f.addr;
    mf.code = f.code;
    mf.has_metadata = f.has_metadata;
    mf.info = f.info;
    mf.lsd = f.lsd;
    if (f.addr == sc.entry) m.entry = f.name;
    m.protect.push_back(f.name);
    m.functions.push_back(std::move(mf));
  }
  m.types = sc.types;
  return m;
}

// ---------------------------------------------------------------------------
// Obfuscation driver

// None leaves the metadata sections empty; Base stores plaintext metadata
// payloads (the exposed baseline); Shadow encrypts them behind decoy codes.
enum class EhMode : uint8_t { None, Base, Shadow };

struct ObfuscateOptions {
  uint64_t seed = 1;
  int shadow_len = 5;
  EhMode eh_mode = EhMode::Shadow;
  const RuleTable* rules = nullptr;  // defaults() when null
};

struct ObfuscateResult {
  bool ok = false;
  std::string err;
  ProtectedModule mod;
  size_t protected_count = 0;
  size_t handler_count = 0;
  std::vector<int> shadow_lengths;
};

inline void load_manifest_images(const ProgramManifest& m, MachineEnv& env) {
  for (const ManifestFn& f : m.functions) env.load_image(f.fid, f.addr, f.code);
}

inline ObfuscateResult obfuscate(const ProgramManifest& m,
                                 const ObfuscateOptions& opt) {
  ObfuscateResult res;
  const RuleTable& rules = opt.rules ? *opt.rules : RuleTable::defaults();

  MachineEnv env;
  load_manifest_images(m, env);
  std::set<uint64_t> non_returning;
  for (const ManifestFn& f : m.functions)
    if (f.non_returning) non_returning.insert(f.addr);

  std::vector<const ManifestFn*> picked;
  std::vector<VmirFunction> vmir;
  for (const ManifestFn& f : m.functions) {
    if (!m.is_protected(f.name)) continue;
    FunctionRange fr{f.addr, f.addr + f.code.size(), f.fid};
    CfgResult cr = recover_function(env, fr, non_returning);
    if (!cr.ok()) {
      res.err = "cfg recovery failed in " + f.name + " at " + hex_u64(cr.err_pc);
      return res;
    }
    auto xr = translate_function(cr.cfg, rules, env);
    if (!xr.ok()) {
      res.err = "translation failed in " + f.name;
      return res;
    }
    picked.push_back(&f);
    vmir.push_back(std::move(xr.fn));
  }

  HandlerTable ht = select_handlers(vmir);
  res.handler_count = ht.size();
  std::vector<AssembleInput> inputs;
  for (size_t i = 0; i < vmir.size(); ++i)
    inputs.push_back({&vmir[i], picked[i]->addr});

  uint8_t key[16];
  Rng krng(sub_seed(opt.seed, "key"));
  for (auto& b : key) b = uint8_t(krng.next());
  uint64_t mod_seed = sub_seed(opt.seed, "module");

  std::vector<uint8_t> suwd, eehp;
  if (opt.eh_mode == EhMode::Base) {
    std::vector<EehpEntry> ees;
    for (const ManifestFn* f : picked)
      if (f->has_metadata) ees.push_back({f->fid, codec_metadata(f->info, f->lsd)});
    eehp = serialize_eehp(ees);
  } else if (opt.eh_mode == EhMode::Shadow) {
    // nonces are a pure function of the module seed; derive eh_nonce the
    // same way assemble does so payloads can be sealed up front
    Rng nrng(sub_seed(mod_seed, "assemble"));
    nrng.next();
    uint64_t eh_nonce = nrng.next();
    std::vector<ShadowRecord> srs;
    std::vector<EehpEntry> ees;
    for (const ManifestFn* f : picked) {
      if (!f->has_metadata) continue;
      auto [sr, ee] = protect_metadata(f->info, f->lsd, key, eh_nonce,
                                       sub_seed(opt.seed, "shadow"),
                                       opt.shadow_len);
      res.shadow_lengths.push_back(int(sr.codes.size()));
      srs.push_back(std::move(sr));
      ees.push_back(std::move(ee));
    }
    suwd = serialize_suwd(srs);
    eehp = serialize_eehp(ees);
  }

  auto ar = assemble_module(inputs, ht, std::move(suwd), std::move(eehp), key,
                            mod_seed, opt.eh_mode == EhMode::Shadow);
  if (!ar.ok()) {
    res.err = std::string("assembly failed: ") + mod_err_name(ar.err);
    return res;
  }
  res.mod = std::move(ar.mod);
  res.protected_count = picked.size();
  res.ok = true;
  return res;
}

// ---------------------------------------------------------------------------
// Leakage scan: does the serialized module contain any 8-byte-or-longer
// substring of a genuine metadata serialization?  A >=8-byte common
// substring exists exactly when an 8-byte one does, so 8-byte windows are
// compared via a hash set.

struct LeakReport {
  bool leaked = false;
  uint64_t fid = 0;      // first leaking function
  size_t blob_off = 0;   // offset of the leaked window in its serialization
};

inline LeakReport leak_scan(const std::vector<uint8_t>& module_bytes,
                            const ProgramManifest& m) {
  LeakReport rep;
  std::unordered_set<uint64_t> windows;
  if (module_bytes.size() >= 8)
    for (size_t i = 0; i + 8 <= module_bytes.size(); ++i) {
      uint64_t w = 0;
      for (int k = 7; k >= 0; --k) w = w << 8 | module_bytes[i + k];
      windows.insert(w);
    }
  for (const ManifestFn& f : m.functions) {
    if (!f.has_metadata) continue;
    std::vector<uint8_t> blob = codec_metadata(f.info, f.lsd);
    for (size_t i = 0; i + 8 <= blob.size(); ++i) {
      uint64_t w = 0;
      for (int k = 7; k >= 0; --k) w = w << 8 | blob[i + k];
      if (windows.count(w)) {
        rep.leaked = true;
        rep.fid = f.fid;
        rep.blob_off = i;
        return rep;
      }
    }
  }
  return rep;
}

}  // namespace xjp
