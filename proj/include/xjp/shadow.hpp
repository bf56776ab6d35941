#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "xjp/assemble.hpp"
#include "xjp/eh.hpp"

// ABI-compliant EH shadowing: randomized decoy unwind codes that satisfy the
// OS dispatcher, encrypted genuine metadata, and the wire formats of the
// SUWD/EEHP sections.

namespace xjp {

// The 12 shadow code types: ALLOC_SMALL, ALLOC_LARGE, PUSH_NONVOL over the 7
// unwindable registers, SAVE_NONVOL(RBX), SAVE_NONVOL(R12), NOP_PAD.
constexpr int kShadowTypeCount = 12;

inline int shadow_type_of(const UnwindCode& c) {
  static const uint8_t push_order[7] = {RBX, RSI, RDI, R12, R13, R14, R15};
  switch (c.kind) {
    case UwKind::AllocSmall: return 0;
    case UwKind::AllocLarge: return 1;
    case UwKind::PushNonvol:
      for (int i = 0; i < 7; ++i)
        if (c.reg == push_order[i]) return 2 + i;
      return -1;
    case UwKind::SaveNonvol:
      if (c.reg == RBX) return 9;
      if (c.reg == R12) return 10;
      return -1;
    case UwKind::NopPad: return 11;
  }
  return -1;
}

inline int64_t shadow_net_delta(const std::vector<UnwindCode>& codes) {
  int64_t d = 0;
  for (const UnwindCode& c : codes) {
    if (c.kind == UwKind::AllocSmall || c.kind == UwKind::AllocLarge)
      d += c.size;
    else if (c.kind == UwKind::PushNonvol)
      d += 8;
  }
  return d;
}

inline std::vector<UnwindCode> gen_shadow_codes(uint64_t seed, int length) {
  static const uint8_t push_order[7] = {RBX, RSI, RDI, R12, R13, R14, R15};
  Rng rng(seed);
  std::vector<UnwindCode> codes;
  for (int i = 0; i < length; ++i) {
    int type = int(rng.below(kShadowTypeCount));
    switch (type) {
      case 0:
        codes.push_back(UnwindCode::alloc(uint16_t(8 * rng.range(1, 16))));
        break;
      case 1:
        codes.push_back(UnwindCode::alloc(uint16_t(8 * rng.range(17, 512))));
        break;
      case 9:
        codes.push_back(UnwindCode::save(RBX, uint16_t(8 * rng.below(64))));
        break;
      case 10:
        codes.push_back(UnwindCode::save(R12, uint16_t(8 * rng.below(64))));
        break;
      case 11:
        codes.push_back(UnwindCode::nop());
        break;
      default:
        codes.push_back(UnwindCode::push(push_order[type - 2]));
        break;
    }
  }
  return codes;
}

// Checks type membership, operand ranges, the RBP/RSP exclusion, the net
// delta bound, and fault-free application on a fully mapped synthetic stack.
inline std::vector<std::string> validate_shadow(
    const std::vector<UnwindCode>& codes, bool delta_only = false) {
  std::vector<std::string> violations;
  for (size_t i = 0; i < codes.size(); ++i) {
    const UnwindCode& c = codes[i];
    std::string at = "code " + std::to_string(i) + ": ";
    int type = shadow_type_of(c);
    if (type < 0) {
      violations.push_back(at + "not one of the 12 shadow types");
      continue;
    }
    if (delta_only && c.kind != UwKind::AllocSmall &&
        c.kind != UwKind::AllocLarge && c.kind != UwKind::NopPad)
      violations.push_back(at + "register-writing code in delta-only mode");
    switch (c.kind) {
      case UwKind::AllocSmall:
        if (c.size == 0 || c.size % 8 || c.size > 128)
          violations.push_back(at + "ALLOC_SMALL size out of range");
        break;
      case UwKind::AllocLarge:
        if (c.size % 8 || c.size < 136 || c.size > 4096)
          violations.push_back(at + "ALLOC_LARGE size out of range");
        break;
      case UwKind::PushNonvol:
      case UwKind::SaveNonvol:
        if (!unwindable_reg(c.reg))
          violations.push_back(at + "register not unwindable");
        if (c.reg == RBP || c.reg == RSP)
          violations.push_back(at + "RBP/RSP restore");
        if (c.kind == UwKind::SaveNonvol && (c.offset % 8 || c.offset > 0x1F8))
          violations.push_back(at + "SAVE offset out of range");
        break;
      case UwKind::NopPad:
        break;
    }
  }
  int64_t delta = shadow_net_delta(codes);
  if (delta >= 0x8000)
    violations.push_back("net stack delta " + std::to_string(delta) +
                         " exceeds 0x8000");
  if (violations.empty()) {
    // must not fault on a fully mapped synthetic stack
    MachineEnv env;
    env.map_region(kStackBase, kStackEnd - kStackBase);
    ContextRecord rec;
    rec.state.gpr[RSP] = kStackBase + 0x8000;
    rec.frame_base = rec.state.gpr[RSP];
    for (const UnwindCode& c : codes) {
      Exec e = apply_unwind_code(rec, c, env);
      if (!e.ok()) {
        violations.push_back("faulted on mapped synthetic stack");
        break;
      }
    }
  }
  return violations;
}

struct ShadowRecord {
  FunctionRange range;
  std::vector<UnwindCode> codes;
  uint64_t lshandler = 0;  // interceptor entry
  int64_t net_delta = 0;
  std::vector<uint8_t> clobbered;  // registers the codes write

  bool operator==(const ShadowRecord&) const = default;
};

struct EehpEntry {
  uint64_t function_id = 0;
  std::vector<uint8_t> ciphertext;  // plaintext codec_metadata in base mode
};

inline ShadowRecord make_shadow_record(const FunctionRange& range,
                                       std::vector<UnwindCode> codes,
                                       uint64_t interceptor) {
  ShadowRecord sr;
  sr.range = range;
  sr.net_delta = shadow_net_delta(codes);
  sr.lshandler = interceptor;
  std::set<uint8_t> regs;
  for (const UnwindCode& c : codes)
    if (c.kind == UwKind::PushNonvol || c.kind == UwKind::SaveNonvol)
      regs.insert(c.reg);
  sr.clobbered.assign(regs.begin(), regs.end());
  sr.codes = std::move(codes);
  return sr;
}

// Replaces a function's genuine metadata with shadow codes and an encrypted
// payload entry; nonce = module EH nonce XOR function-id.
inline std::pair<ShadowRecord, EehpEntry> protect_metadata(
    const UnwindInfo& info, const LsData& lsd, const uint8_t key[16],
    uint64_t eh_nonce, uint64_t seed, int shadow_len,
    uint64_t interceptor = 0xE0001000) {
  ShadowRecord sr = make_shadow_record(
      info.range, gen_shadow_codes(sub_seed(seed, "shadow", info.range.function_id),
                                   shadow_len),
      interceptor);
  EehpEntry e;
  e.function_id = info.range.function_id;
  e.ciphertext = crypt_stream(key, eh_nonce ^ info.range.function_id,
                              codec_metadata(info, lsd));
  return {std::move(sr), std::move(e)};
}

// ---------------------------------------------------------------------------
// Section wire formats

inline std::vector<uint8_t> serialize_suwd(const std::vector<ShadowRecord>& recs) {
  std::vector<uint8_t> out;
  put_u32(out, uint32_t(recs.size()));
  for (const ShadowRecord& r : recs) {
    put_u64(out, r.range.function_id);
    put_u64(out, r.range.start_pc);
    put_u64(out, r.range.end_pc);
    put_u64(out, r.lshandler);
    put_u8(out, uint8_t(r.codes.size()));
    for (const UnwindCode& c : r.codes) detail::put_code(out, c);
    put_u64(out, uint64_t(r.net_delta));
  }
  return out;
}

inline bool parse_suwd(const std::vector<uint8_t>& in,
                       std::vector<ShadowRecord>& recs) {
  ByteReader r(in.data(), in.size());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n && r.ok; ++i) {
    ShadowRecord sr;
    sr.range.function_id = r.u64();
    sr.range.start_pc = r.u64();
    sr.range.end_pc = r.u64();
    sr.lshandler = r.u64();
    uint8_t nc = r.u8();
    std::vector<UnwindCode> codes;
    for (uint8_t j = 0; j < nc && r.ok; ++j) {
      UnwindCode c;
      if (!detail::get_code(r, c)) return false;
      codes.push_back(c);
    }
    int64_t delta = int64_t(r.u64());
    if (!r.ok) return false;
    sr = make_shadow_record(sr.range, std::move(codes), sr.lshandler);
    sr.net_delta = delta;
    recs.push_back(std::move(sr));
  }
  return r.ok;
}

inline std::vector<uint8_t> serialize_eehp(const std::vector<EehpEntry>& entries) {
  std::vector<uint8_t> out;
  put_u32(out, uint32_t(entries.size()));
  for (const EehpEntry& e : entries) {
    put_u64(out, e.function_id);
    put_u32(out, uint32_t(e.ciphertext.size()));
    out.insert(out.end(), e.ciphertext.begin(), e.ciphertext.end());
  }
  return out;
}

inline bool parse_eehp(const std::vector<uint8_t>& in,
                       std::vector<EehpEntry>& entries) {
  ByteReader r(in.data(), in.size());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n && r.ok; ++i) {
    EehpEntry e;
    e.function_id = r.u64();
    uint32_t len = r.u32();
    if (!r.ok || r.pos + len > in.size()) return false;
    e.ciphertext.assign(in.begin() + r.pos, in.begin() + r.pos + len);
    r.pos += len;
    entries.push_back(std::move(e));
  }
  return r.ok;
}

// ---------------------------------------------------------------------------
// Diversity statistics

struct DiversityReport {
  size_t distinct_sequences = 0;       // types + operands
  size_t distinct_type_signatures = 0;
  size_t type_histogram[kShadowTypeCount] = {};
  size_t invalid = 0;  // sequences failing validate_shadow
};

inline DiversityReport diversity_report(int length, uint64_t samples,
                                        uint64_t base_seed) {
  DiversityReport rep;
  std::set<std::vector<uint8_t>> full;
  std::set<std::vector<uint8_t>> sigs;
  for (uint64_t s = 0; s < samples; ++s) {
    std::vector<UnwindCode> codes = gen_shadow_codes(base_seed + s, length);
    if (!validate_shadow(codes).empty()) ++rep.invalid;
    std::vector<uint8_t> bytes, sig;
    for (const UnwindCode& c : codes) {
      detail::put_code(bytes, c);
      int t = shadow_type_of(c);
      sig.push_back(uint8_t(t));
      if (t >= 0) ++rep.type_histogram[t];
    }
    full.insert(std::move(bytes));
    sigs.insert(std::move(sig));
  }
  rep.distinct_sequences = full.size();
  rep.distinct_type_signatures = sigs.size();
  return rep;
}

}  // namespace xjp
