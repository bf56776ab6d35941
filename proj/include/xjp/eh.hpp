#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xjp/cfg.hpp"
#include "xjp/common.hpp"
#include "xjp/isa.hpp"

// Genuine exception-handling metadata: global-section unwind codes, the
// local-section LSData state machine, and the frame-unwinding algebra.

namespace xjp {

enum class UwKind : uint8_t {
  AllocSmall,  // size <= 128
  AllocLarge,  // size in [136, 4096]
  PushNonvol,
  SaveNonvol,
  NopPad,
};

// Registers an unwind code may restore. RBP and RSP are excluded everywhere.
inline bool unwindable_reg(uint8_t r) {
  return r == RBX || r == RSI || r == RDI || r == R12 || r == R13 ||
         r == R14 || r == R15;
}

struct UnwindCode {
  UwKind kind = UwKind::NopPad;
  uint16_t size = 0;    // ALLOC_* byte count
  uint8_t reg = 0;      // PUSH/SAVE
  uint16_t offset = 0;  // SAVE: frame-base-relative byte offset

  bool operator==(const UnwindCode&) const = default;

  static UnwindCode alloc(uint16_t size) {
    UnwindCode c;
    c.kind = size <= 128 ? UwKind::AllocSmall : UwKind::AllocLarge;
    c.size = size;
    return c;
  }
  static UnwindCode push(uint8_t reg) {
    UnwindCode c;
    c.kind = UwKind::PushNonvol;
    c.reg = reg;
    return c;
  }
  static UnwindCode save(uint8_t reg, uint16_t offset) {
    UnwindCode c;
    c.kind = UwKind::SaveNonvol;
    c.reg = reg;
    c.offset = offset;
    return c;
  }
  static UnwindCode nop() { return UnwindCode{}; }
};

struct UnwindInfo {
  FunctionRange range;
  std::vector<UnwindCode> codes;  // reverse-application order
  uint64_t lshandler = 0;         // 0 = none
  bool has_lsd = false;

  bool operator==(const UnwindInfo&) const = default;
};

constexpr int16_t kNoState = -1;
constexpr uint64_t kNoDtor = ~0ull;

struct IpStateRange {
  uint64_t start_pc = 0;
  uint64_t end_pc = 0;  // exclusive
  int16_t state = kNoState;

  bool operator==(const IpStateRange&) const = default;
};

struct UnwindMapEntry {
  int16_t parent = kNoState;
  uint64_t dtor = kNoDtor;  // destructor thunk function-id

  bool operator==(const UnwindMapEntry&) const = default;
};

struct CatchClause {
  uint32_t type_id = 0;
  uint64_t target_pc = 0;
  int16_t state = kNoState;

  bool operator==(const CatchClause&) const = default;
};

struct TryBlock {
  int16_t low = 0;
  int16_t high = 0;  // inclusive state interval
  std::vector<CatchClause> catches;

  bool operator==(const TryBlock&) const = default;
};

struct LsData {
  int16_t state_count = 0;
  std::vector<IpStateRange> ip2state;
  std::vector<UnwindMapEntry> unwind_map;  // indexed by state
  std::vector<TryBlock> tries;

  bool operator==(const LsData&) const = default;
};

struct TypeTable {
  std::map<uint32_t, uint32_t> parent;  // 0 = root (no parent)

  bool known(uint32_t id) const { return parent.count(id) != 0; }
};

enum class EhErr : uint8_t {
  None,
  UnknownType,
  MalformedLsData,
  MalformedMetadata,
  NoActiveException,
};

// catch is thrown itself or one of its ancestors
inline std::optional<bool> match_type(uint32_t thrown, uint32_t catch_id,
                                      const TypeTable& types) {
  if (!types.known(thrown) || !types.known(catch_id)) return std::nullopt;
  std::set<uint32_t> seen;
  for (uint32_t t = thrown; t != 0;) {
    if (t == catch_id) return true;
    if (!seen.insert(t).second) return false;
    auto it = types.parent.find(t);
    if (it == types.parent.end()) return false;
    t = it->second;
  }
  return false;
}

// ---------------------------------------------------------------------------
// ContextRecord and frame unwinding

struct ContextRecord {
  MachineState state;
  uint64_t frame_base = 0;

  bool operator==(const ContextRecord&) const = default;
};

inline Exec apply_unwind_code(ContextRecord& rec, const UnwindCode& code,
                              const MachineEnv& env) {
  switch (code.kind) {
    case UwKind::AllocSmall:
    case UwKind::AllocLarge:
      rec.state.gpr[RSP] += code.size;
      return {};
    case UwKind::PushNonvol: {
      uint64_t v;
      Exec e = env.read(rec.state.gpr[RSP], 8, v);
      if (!e.ok()) return e;
      rec.state.gpr[code.reg] = v;
      rec.state.gpr[RSP] += 8;
      return {};
    }
    case UwKind::SaveNonvol: {
      uint64_t v;
      Exec e = env.read(rec.frame_base + code.offset, 8, v);
      if (!e.ok()) return e;
      rec.state.gpr[code.reg] = v;
      return {};
    }
    case UwKind::NopPad:
      return {};
  }
  return {};
}

// Applies all codes, then pops the return address into rip.
inline Exec unwind_frame(ContextRecord& rec, const UnwindInfo& info,
                         const MachineEnv& env) {
  for (const UnwindCode& c : info.codes) {
    Exec e = apply_unwind_code(rec, c, env);
    if (!e.ok()) return e;
  }
  uint64_t ret;
  Exec e = env.read(rec.state.gpr[RSP], 8, ret);
  if (!e.ok()) return e;
  rec.state.rip = ret;
  rec.state.gpr[RSP] += 8;
  return {};
}

// ---------------------------------------------------------------------------
// LSData FSM

inline int16_t state_for_pc(const LsData& lsd, uint64_t pc) {
  for (const IpStateRange& r : lsd.ip2state)
    if (pc >= r.start_pc && pc < r.end_pc) return r.state;
  return kNoState;
}

struct UnwindPlan {
  bool catch_found = false;
  uint64_t catch_target = 0;
  int16_t catch_state = kNoState;
  std::vector<uint64_t> dtors;  // innermost first
};

inline std::optional<UnwindPlan> plan_actions(const LsData& lsd,
                                              int16_t from_state,
                                              uint32_t exc_type,
                                              const TypeTable& types) {
  UnwindPlan plan;
  std::set<int16_t> visited;
  for (int16_t s = from_state; s != kNoState;) {
    if (s < 0 || s >= lsd.state_count) return std::nullopt;
    if (!visited.insert(s).second) return std::nullopt;  // cycle
    for (const TryBlock& tb : lsd.tries) {
      if (s < tb.low || s > tb.high) continue;
      for (const CatchClause& cc : tb.catches) {
        auto m = match_type(exc_type, cc.type_id, types);
        if (!m) return std::nullopt;
        if (*m) {
          plan.catch_found = true;
          plan.catch_target = cc.target_pc;
          plan.catch_state = cc.state;
          return plan;
        }
      }
    }
    const UnwindMapEntry& e = lsd.unwind_map[s];
    if (e.dtor != kNoDtor) plan.dtors.push_back(e.dtor);
    s = e.parent;
  }
  return plan;  // NoCatch
}

// ---------------------------------------------------------------------------
// Metadata wire format. Every serialization is XOR-folded with a fixed
// 16-byte tag so constant fields never produce long constant byte runs; this
// keeps substring-based leakage scans meaningful on real containers.

namespace detail {

inline const uint8_t* metadata_pad() {
  static const uint8_t pad[16] = {0xD3, 0x91, 0x5A, 0xC6, 0x17, 0x88, 0xE4,
                                  0x2F, 0x6B, 0xA0, 0x3D, 0xF2, 0x49, 0x8E,
                                  0xB5, 0x7C};
  return pad;
}

inline void metadata_fold(std::vector<uint8_t>& bytes) {
  const uint8_t* pad = metadata_pad();
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] ^= pad[i % 16];
}

inline void put_code(std::vector<uint8_t>& out, const UnwindCode& c) {
  put_u8(out, uint8_t(c.kind));
  switch (c.kind) {
    case UwKind::AllocSmall:
      put_u8(out, uint8_t(c.size / 8));
      put_u16(out, 0);
      break;
    case UwKind::AllocLarge:
      put_u16(out, uint16_t(c.size / 8));
      put_u8(out, 0);
      break;
    case UwKind::PushNonvol:
      put_u8(out, c.reg);
      put_u16(out, 0);
      break;
    case UwKind::SaveNonvol:
      put_u8(out, c.reg);
      put_u16(out, uint16_t(c.offset / 8));
      break;
    case UwKind::NopPad:
      put_u8(out, 0);
      put_u16(out, 0);
      break;
  }
}

inline bool get_code(ByteReader& r, UnwindCode& c) {
  uint8_t kind = r.u8();
  if (kind > uint8_t(UwKind::NopPad)) return false;
  c.kind = UwKind(kind);
  switch (c.kind) {
    case UwKind::AllocSmall:
      c.size = uint16_t(r.u8() * 8);
      r.u16();
      break;
    case UwKind::AllocLarge:
      c.size = uint16_t(r.u16() * 8);
      r.u8();
      break;
    case UwKind::PushNonvol:
      c.reg = uint8_t(r.u8());
      r.u16();
      break;
    case UwKind::SaveNonvol:
      c.reg = uint8_t(r.u8());
      c.offset = uint16_t(r.u16() * 8);
      break;
    case UwKind::NopPad:
      r.u8();
      r.u16();
      break;
  }
  return r.ok;
}

}  // namespace detail

inline std::vector<uint8_t> codec_metadata(const UnwindInfo& info,
                                           const LsData& lsd) {
  std::vector<uint8_t> out;
  put_u16(out, 0x4845);  // 'EH'
  put_u8(out, 1);
  put_u64(out, info.range.start_pc);
  put_u64(out, info.range.end_pc);
  put_u64(out, info.range.function_id);
  put_u64(out, info.lshandler);
  put_u8(out, uint8_t(info.codes.size()));
  for (const UnwindCode& c : info.codes) detail::put_code(out, c);
  put_u8(out, info.has_lsd ? 1 : 0);
  if (info.has_lsd) {
    put_u16(out, uint16_t(lsd.state_count));
    put_u16(out, uint16_t(lsd.ip2state.size()));
    for (const IpStateRange& r : lsd.ip2state) {
      put_u64(out, r.start_pc);
      put_u64(out, r.end_pc);
      put_u16(out, uint16_t(r.state));
    }
    for (int16_t s = 0; s < lsd.state_count; ++s) {
      const UnwindMapEntry& e = lsd.unwind_map[s];
      put_u16(out, uint16_t(e.parent));
      put_u8(out, e.dtor == kNoDtor ? 0 : 1);
      put_u64(out, e.dtor == kNoDtor ? 0 : e.dtor);
    }
    put_u16(out, uint16_t(lsd.tries.size()));
    for (const TryBlock& tb : lsd.tries) {
      put_u16(out, uint16_t(tb.low));
      put_u16(out, uint16_t(tb.high));
      put_u8(out, uint8_t(tb.catches.size()));
      for (const CatchClause& cc : tb.catches) {
        put_u32(out, cc.type_id);
        put_u64(out, cc.target_pc);
        put_u16(out, uint16_t(cc.state));
      }
    }
  }
  detail::metadata_fold(out);
  return out;
}

inline EhErr parse_metadata(const std::vector<uint8_t>& folded,
                            UnwindInfo& info, LsData& lsd) {
  std::vector<uint8_t> bytes = folded;
  detail::metadata_fold(bytes);
  ByteReader r(bytes.data(), bytes.size());
  if (r.u16() != 0x4845 || r.u8() != 1 || !r.ok)
    return EhErr::MalformedMetadata;
  info.range.start_pc = r.u64();
  info.range.end_pc = r.u64();
  info.range.function_id = r.u64();
  info.lshandler = r.u64();
  uint8_t ncodes = r.u8();
  info.codes.clear();
  for (uint8_t i = 0; i < ncodes; ++i) {
    UnwindCode c;
    if (!detail::get_code(r, c)) return EhErr::MalformedMetadata;
    info.codes.push_back(c);
  }
  info.has_lsd = r.u8() != 0;
  lsd = LsData{};
  if (info.has_lsd) {
    lsd.state_count = int16_t(r.u16());
    uint16_t nip = r.u16();
    for (uint16_t i = 0; i < nip && r.ok; ++i) {
      IpStateRange ir;
      ir.start_pc = r.u64();
      ir.end_pc = r.u64();
      ir.state = int16_t(r.u16());
      lsd.ip2state.push_back(ir);
    }
    for (int16_t s = 0; s < lsd.state_count && r.ok; ++s) {
      UnwindMapEntry e;
      e.parent = int16_t(r.u16());
      bool has = r.u8() != 0;
      uint64_t d = r.u64();
      e.dtor = has ? d : kNoDtor;
      lsd.unwind_map.push_back(e);
    }
    uint16_t ntries = r.u16();
    for (uint16_t i = 0; i < ntries && r.ok; ++i) {
      TryBlock tb;
      tb.low = int16_t(r.u16());
      tb.high = int16_t(r.u16());
      uint8_t nc = r.u8();
      for (uint8_t j = 0; j < nc && r.ok; ++j) {
        CatchClause cc;
        cc.type_id = r.u32();
        cc.target_pc = r.u64();
        cc.state = int16_t(r.u16());
        tb.catches.push_back(cc);
      }
      lsd.tries.push_back(std::move(tb));
    }
  }
  if (!r.ok || r.pos != bytes.size()) return EhErr::MalformedMetadata;
  return EhErr::None;
}

}  // namespace xjp
