#pragma once

#include <cassert>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xjp/common.hpp"

// x86-64 subset: instruction model, byte-level decoder/encoder, and the
// single-step reference interpreter that serves as semantic ground truth
// for everything else in the project.

namespace xjp {

// ---------------------------------------------------------------------------
// Registers

enum Reg : uint8_t {
  RAX = 0, RCX, RDX, RBX, RSP, RBP, RSI, RDI,
  R8, R9, R10, R11, R12, R13, R14, R15,
};

inline const char* reg_name(uint8_t r) {
  static const char* names[16] = {"rax", "rcx", "rdx", "rbx", "rsp", "rbp",
                                  "rsi", "rdi", "r8",  "r9",  "r10", "r11",
                                  "r12", "r13", "r14", "r15"};
  return r < 16 ? names[r] : "?";
}

// ---------------------------------------------------------------------------
// Opcode kinds (42)

enum class Op : uint8_t {
  MOV, MOVZX, MOVSX, LEA, XCHG,
  ADD, ADC, SUB, SBB, CMP, TEST,
  AND, OR, XOR, NOT, NEG, INC, DEC,
  SHL, SHR, SAR, ROL, ROR,
  IMUL, MUL, DIV, IDIV, CDQ, CQO,
  PUSH, POP, CALL, RET, JMP, JCC, SETCC, CMOVCC,
  NOP, INT3, LEAVE, BSWAP, BT,
};

constexpr int kOpCount = 42;

inline const char* op_name(Op op) {
  static const char* names[kOpCount] = {
      "mov", "movzx", "movsx", "lea", "xchg", "add", "adc", "sub", "sbb",
      "cmp", "test",  "and",   "or",  "xor",  "not", "neg", "inc", "dec",
      "shl", "shr",   "sar",   "rol", "ror",  "imul", "mul", "div", "idiv",
      "cdq", "cqo",   "push",  "pop", "call", "ret", "jmp", "jcc", "setcc",
      "cmovcc", "nop", "int3", "leave", "bswap", "bt"};
  return names[static_cast<int>(op)];
}

// Condition codes, hardware order (cc nibble of 0F 8x / 0F 4x / 0F 9x).
enum Cond : uint8_t {
  CC_O = 0, CC_NO, CC_B, CC_AE, CC_E, CC_NE, CC_BE, CC_A,
  CC_S, CC_NS, CC_P, CC_NP, CC_L, CC_GE, CC_LE, CC_G,
};
constexpr uint8_t kNoCond = 0xFF;

inline const char* cond_name(uint8_t cc) {
  static const char* names[16] = {"o", "no", "b", "ae", "e", "ne", "be", "a",
                                  "s", "ns", "p", "np", "l", "ge", "le", "g"};
  return cc < 16 ? names[cc] : "?";
}

// ---------------------------------------------------------------------------
// Operands

struct MemForm {
  int8_t base = -1;    // -1 = no base
  int8_t index = -1;   // -1 = no index; never RSP
  uint8_t scale = 1;   // 1/2/4/8, meaningful only when index present
  int32_t disp = 0;

  bool operator==(const MemForm&) const = default;
};

struct Operand {
  enum class Kind : uint8_t { Reg, Imm, Mem };
  Kind kind = Kind::Reg;
  uint8_t reg = 0;
  int64_t imm = 0;
  MemForm mem{};

  static Operand make_reg(uint8_t r) {
    Operand o;
    o.kind = Kind::Reg;
    o.reg = r;
    return o;
  }
  static Operand make_imm(int64_t v) {
    Operand o;
    o.kind = Kind::Imm;
    o.imm = v;
    return o;
  }
  static Operand make_mem(MemForm m) {
    Operand o;
    o.kind = Kind::Mem;
    o.mem = m;
    return o;
  }

  bool is_reg() const { return kind == Kind::Reg; }
  bool is_imm() const { return kind == Kind::Imm; }
  bool is_mem() const { return kind == Kind::Mem; }

  bool operator==(const Operand&) const = default;
};

struct Instruction {
  Op opcode = Op::NOP;
  uint8_t width = 64;      // operand width: 8/32/64
  uint8_t src_width = 0;   // widening moves only (MOVZX/MOVSX); 0 otherwise
  uint8_t cc = kNoCond;    // JCC/SETCC/CMOVCC
  uint8_t raw_length = 0;
  std::vector<Operand> operands;

  // Semantic equality ignores raw_length (canonical re-encoding may differ)
  // and compares immediates masked to the operand width, since sign-extending
  // encodings make e.g. 0x80000000 and 0xFFFFFFFF80000000 the same 32-bit
  // operand.
  bool same_semantics(const Instruction& o) const {
    if (opcode != o.opcode || width != o.width || src_width != o.src_width ||
        cc != o.cc || operands.size() != o.operands.size())
      return false;
    uint64_t m = width >= 64 ? ~0ull : ((1ull << width) - 1);
    for (size_t i = 0; i < operands.size(); ++i) {
      const Operand& a = operands[i];
      const Operand& b = o.operands[i];
      if (a.kind != b.kind) return false;
      if (a.is_imm()) {
        if ((uint64_t(a.imm) & m) != (uint64_t(b.imm) & m)) return false;
      } else if (!(a == b)) {
        return false;
      }
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Machine state

struct Flags {
  bool cf = false, pf = false, af = false, zf = false, sf = false, of = false;
  bool operator==(const Flags&) const = default;
};

struct MachineState {
  std::array<uint64_t, 16> gpr{};
  uint64_t rip = 0;
  Flags fl{};

  bool operator==(const MachineState&) const = default;
};

// ---------------------------------------------------------------------------
// Execution errors

enum class XKind : uint8_t {
  Ok,
  Fault,                 // unmapped memory access
  DivideError,
  UnknownEncoding,
  TruncatedInstruction,
  Barrier,               // INT3 reached at execution time
  StepLimit,
  BadHandlerId,
  Internal,
};

struct Exec {
  XKind kind = XKind::Ok;
  uint64_t addr = 0;  // faulting address / pc, when meaningful

  bool ok() const { return kind == XKind::Ok; }
  static Exec good() { return {}; }
  static Exec fail(XKind k, uint64_t a = 0) { return {k, a}; }
  bool operator==(const Exec&) const = default;
};

inline const char* xkind_name(XKind k) {
  switch (k) {
    case XKind::Ok: return "ok";
    case XKind::Fault: return "fault";
    case XKind::DivideError: return "divide-error";
    case XKind::UnknownEncoding: return "unknown-encoding";
    case XKind::TruncatedInstruction: return "truncated-instruction";
    case XKind::Barrier: return "barrier";
    case XKind::StepLimit: return "step-limit";
    case XKind::BadHandlerId: return "bad-handler-id";
    case XKind::Internal: return "internal";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Simulated process environment: sparse paged memory, code images,
// well-known runtime addresses, lifecycle and audit event sinks.

enum class AuditKind : uint8_t {
  Throw,
  FrameDispatched,
  DestructorRun,
  ShadowApplied,
  Rollback,
  Decrypt,
  Sanitize,
  CatchCommit,
};

struct AuditEvent {
  AuditKind kind;
  uint64_t a = 0, b = 0;
};

struct LifecycleEvent {
  bool construct;
  uint64_t tag;
};

struct CodeImage {
  uint64_t function_id = 0;
  uint64_t load_addr = 0;
  std::vector<uint8_t> bytes;
};

class MachineEnv {
public:
  static constexpr uint64_t kPageSize = 4096;

  // Well-known addresses; all unmapped, recognized by the run harness.
  uint64_t throw_entry = 0xE0000000;
  uint64_t rethrow_entry = 0xE0000100;
  uint64_t interceptor_entry = 0xE0001000;
  uint64_t halt_address = 0xE000FFF0;

  // Lifecycle ports: 64-bit stores here are recorded as object
  // construct/destruct events instead of hitting memory.
  uint64_t construct_port = 0x20000;
  uint64_t destruct_port = 0x20008;

  std::vector<LifecycleEvent> lifecycle;
  std::vector<AuditEvent> audit;

  void map_region(uint64_t addr, uint64_t size) {
    uint64_t first = addr / kPageSize;
    uint64_t last = (addr + size - 1) / kPageSize;
    for (uint64_t p = first; p <= last; ++p) pages_.try_emplace(p);
  }

  bool mapped(uint64_t addr) const {
    return pages_.count(addr / kPageSize) != 0;
  }

  void load_image(uint64_t function_id, uint64_t addr,
                  std::vector<uint8_t> bytes) {
    map_region(addr, bytes.empty() ? 1 : bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) poke8(addr + i, bytes[i]);
    images_.push_back({function_id, addr, std::move(bytes)});
  }

  const std::vector<CodeImage>& images() const { return images_; }

  Exec read(uint64_t addr, unsigned size, uint64_t& out) const {
    uint64_t v = 0;
    for (unsigned i = 0; i < size; ++i) {
      auto it = pages_.find((addr + i) / kPageSize);
      if (it == pages_.end()) return Exec::fail(XKind::Fault, addr + i);
      v |= uint64_t(it->second[(addr + i) % kPageSize]) << (8 * i);
    }
    out = v;
    return Exec::good();
  }

  Exec write(uint64_t addr, unsigned size, uint64_t value) {
    if (size == 8 && (addr == construct_port || addr == destruct_port)) {
      bool c = addr == construct_port;
      lifecycle.push_back({c, value});
      counter_ += c ? 1 : -1;
      return Exec::good();
    }
    for (unsigned i = 0; i < size; ++i) {
      auto it = pages_.find((addr + i) / kPageSize);
      if (it == pages_.end()) return Exec::fail(XKind::Fault, addr + i);
      it->second[(addr + i) % kPageSize] = uint8_t(value >> (8 * i));
    }
    return Exec::good();
  }

  int64_t lifecycle_counter() const { return counter_; }

  // Raw byte view for decoding and for byte-compare of regions in tests.
  Exec fetch(uint64_t addr, unsigned max, std::vector<uint8_t>& out) const {
    out.clear();
    for (unsigned i = 0; i < max; ++i) {
      auto it = pages_.find((addr + i) / kPageSize);
      if (it == pages_.end()) break;
      out.push_back(it->second[(addr + i) % kPageSize]);
    }
    if (out.empty()) return Exec::fail(XKind::Fault, addr);
    return Exec::good();
  }

  // Direct page view (nullptr when unmapped); lets tests compare whole
  // regions without the per-byte read path.
  const uint8_t* page_data(uint64_t addr) const {
    auto it = pages_.find(addr / kPageSize);
    return it == pages_.end() ? nullptr : it->second.data();
  }

private:
  void poke8(uint64_t addr, uint8_t v) {
    pages_[addr / kPageSize][addr % kPageSize] = v;
  }

  std::unordered_map<uint64_t, std::array<uint8_t, kPageSize>> pages_;
  std::vector<CodeImage> images_;
  int64_t counter_ = 0;

public:
  // Exception-dispatch run state (one simulated execution per env).
  uint64_t next_object_id = 1;
  struct ActiveException {
    uint64_t object_id = 0;
    uint64_t type_id = 0;
    uint64_t payload = 0;
  };
  std::optional<ActiveException> active_exception;
};

// Conventional layout used by the generators and the run harness.
constexpr uint64_t kScratchBase = 0x1000;
constexpr uint64_t kScratchEnd = 0x11000;
constexpr uint64_t kStackBase = 0x7FFF0000;
constexpr uint64_t kStackEnd = 0x80000000;
constexpr uint64_t kChecksumAddr = 0x10FF8;

// ---------------------------------------------------------------------------
// ALU: width-masked arithmetic with the six-flag model shared by the oracle
// and the VM handlers. AF is deterministic here but declared meaningful only
// for ADD/ADC/SUB/SBB/CMP/INC/DEC/NEG; the harness masks it elsewhere.

namespace alu {

inline uint64_t mask(unsigned w) {
  return w >= 64 ? ~0ull : ((1ull << w) - 1);
}
inline bool msb(uint64_t v, unsigned w) { return (v >> (w - 1)) & 1; }

inline bool parity(uint64_t v) {
  uint8_t b = uint8_t(v);
  b ^= b >> 4;
  b ^= b >> 2;
  b ^= b >> 1;
  return !(b & 1);
}

inline void set_szp(Flags& f, uint64_t res, unsigned w) {
  res &= mask(w);
  f.zf = res == 0;
  f.sf = msb(res, w);
  f.pf = parity(res);
}

inline uint64_t add(unsigned w, uint64_t a, uint64_t b, bool cin, Flags& f) {
  a &= mask(w);
  b &= mask(w);
  uint64_t res = (a + b + (cin ? 1 : 0)) & mask(w);
  f.cf = w == 64 ? (res < a || (cin && res == a)) : (a + b + (cin ? 1 : 0)) > mask(w);
  f.of = msb((a ^ res) & (b ^ res), w);
  f.af = ((a ^ b ^ res) >> 4) & 1;
  set_szp(f, res, w);
  return res;
}

inline uint64_t sub(unsigned w, uint64_t a, uint64_t b, bool bin, Flags& f) {
  a &= mask(w);
  b &= mask(w);
  uint64_t res = (a - b - (bin ? 1 : 0)) & mask(w);
  f.cf = (b + (bin ? 1 : 0)) > a || (bin && b == mask(w));
  f.of = msb((a ^ b) & (a ^ res), w);
  f.af = ((a ^ b ^ res) >> 4) & 1;
  set_szp(f, res, w);
  return res;
}

enum class LogicOp { And, Or, Xor };

inline uint64_t logic(unsigned w, LogicOp op, uint64_t a, uint64_t b, Flags& f) {
  a &= mask(w);
  b &= mask(w);
  uint64_t res = op == LogicOp::And ? (a & b) : op == LogicOp::Or ? (a | b) : (a ^ b);
  f.cf = false;
  f.of = false;
  f.af = false;
  set_szp(f, res, w);
  return res;
}

inline uint64_t inc(unsigned w, uint64_t a, Flags& f) {
  bool cf = f.cf;
  uint64_t res = add(w, a, 1, false, f);
  f.cf = cf;
  return res;
}

inline uint64_t dec(unsigned w, uint64_t a, Flags& f) {
  bool cf = f.cf;
  uint64_t res = sub(w, a, 1, false, f);
  f.cf = cf;
  return res;
}

inline uint64_t neg(unsigned w, uint64_t a, Flags& f) {
  uint64_t res = sub(w, 0, a, false, f);
  f.cf = (a & mask(w)) != 0;
  return res;
}

// Shift/rotate model: count masked to 5 bits (6 for 64-bit operands); a
// masked count of zero leaves value and flags untouched. OF uses the
// count==1 hardware formula for every nonzero count, which keeps the model
// deterministic where the manual says "undefined".
inline uint64_t shl(unsigned w, uint64_t v, uint64_t count, Flags& f) {
  unsigned c = count & (w == 64 ? 63 : 31);
  if (c == 0) return v & mask(w);
  v &= mask(w);
  uint64_t res = c >= w ? 0 : (v << c) & mask(w);
  f.cf = c <= w ? ((v >> (w - c)) & 1) : false;
  f.of = msb(res, w) != f.cf;
  f.af = false;
  set_szp(f, res, w);
  return res;
}

inline uint64_t shr(unsigned w, uint64_t v, uint64_t count, Flags& f) {
  unsigned c = count & (w == 64 ? 63 : 31);
  if (c == 0) return v & mask(w);
  v &= mask(w);
  uint64_t res = c >= w ? 0 : v >> c;
  f.cf = c <= w ? ((v >> (c - 1)) & 1) : false;
  f.of = msb(v, w);
  f.af = false;
  set_szp(f, res, w);
  return res;
}

inline uint64_t sar(unsigned w, uint64_t v, uint64_t count, Flags& f) {
  unsigned c = count & (w == 64 ? 63 : 31);
  if (c == 0) return v & mask(w);
  v &= mask(w);
  bool neg_in = msb(v, w);
  uint64_t res;
  if (c >= w) {
    res = neg_in ? mask(w) : 0;
    f.cf = neg_in;
  } else {
    res = v >> c;
    if (neg_in) res |= mask(w) & ~(mask(w) >> c);
    f.cf = (v >> (c - 1)) & 1;
  }
  f.of = false;
  f.af = false;
  set_szp(f, res, w);
  return res;
}

inline uint64_t rol(unsigned w, uint64_t v, uint64_t count, Flags& f) {
  unsigned c = count & (w == 64 ? 63 : 31);
  if (c == 0) return v & mask(w);
  v &= mask(w);
  unsigned e = c % w;
  uint64_t res = e == 0 ? v : ((v << e) | (v >> (w - e))) & mask(w);
  f.cf = res & 1;
  f.of = msb(res, w) != f.cf;
  return res;
}

inline uint64_t ror(unsigned w, uint64_t v, uint64_t count, Flags& f) {
  unsigned c = count & (w == 64 ? 63 : 31);
  if (c == 0) return v & mask(w);
  v &= mask(w);
  unsigned e = c % w;
  uint64_t res = e == 0 ? v : ((v >> e) | (v << (w - e))) & mask(w);
  f.cf = msb(res, w);
  f.of = msb(res, w) != ((res >> (w - 2)) & 1);
  return res;
}

// Unsigned full multiply; CF=OF = high half nonzero; SF/ZF/PF/AF preserved.
inline uint64_t mul_u(unsigned w, uint64_t a, uint64_t b, uint64_t& hi, Flags& f) {
  a &= mask(w);
  b &= mask(w);
  uint64_t lo;
  if (w == 64) {
    unsigned __int128 p = (unsigned __int128)a * b;
    lo = uint64_t(p);
    hi = uint64_t(p >> 64);
  } else {
    uint64_t p = a * b;
    lo = p & mask(w);
    hi = (p >> w) & mask(w);
  }
  f.cf = f.of = hi != 0;
  return lo;
}

inline int64_t sext(uint64_t v, unsigned w) {
  if (w >= 64) return int64_t(v);
  uint64_t m = 1ull << (w - 1);
  return int64_t(((v & mask(w)) ^ m) - m);
}

// Signed full multiply; CF=OF set when the full product does not fit the
// sign-extended low half (shared by one-operand IMUL and IMUL r, r/m).
inline uint64_t mul_s(unsigned w, uint64_t a, uint64_t b, uint64_t& hi, Flags& f) {
  int64_t sa = sext(a, w), sb = sext(b, w);
  uint64_t lo;
  if (w == 64) {
    __int128 p = (__int128)sa * sb;
    lo = uint64_t(p);
    hi = uint64_t(uint64_t(p >> 64));
    f.cf = f.of = p != (__int128)int64_t(lo);
  } else {
    int64_t p = sa * sb;
    lo = uint64_t(p) & mask(w);
    hi = (uint64_t(p) >> w) & mask(w);
    f.cf = f.of = p != sext(lo, w);
  }
  return lo;
}

// Returns false on divide-by-zero or quotient overflow. Flags preserved.
inline bool div_u(unsigned w, uint64_t lo, uint64_t hi, uint64_t divisor,
                  uint64_t& quot, uint64_t& rem) {
  divisor &= mask(w);
  if (divisor == 0) return false;
  if (w == 64) {
    if (hi >= divisor) return false;
    unsigned __int128 n = ((unsigned __int128)hi << 64) | lo;
    quot = uint64_t(n / divisor);
    rem = uint64_t(n % divisor);
  } else {
    uint64_t n = ((hi & mask(w)) << w) | (lo & mask(w));
    uint64_t q = n / divisor;
    if (q > mask(w)) return false;
    quot = q;
    rem = n % divisor;
  }
  return true;
}

inline bool div_s(unsigned w, uint64_t lo, uint64_t hi, uint64_t divisor,
                  uint64_t& quot, uint64_t& rem) {
  int64_t d = sext(divisor, w);
  if (d == 0) return false;
  if (w == 64) {
    __int128 n = ((__int128)int64_t(hi) << 64) | lo;
    __int128 q = n / d;
    if (q > INT64_MAX || q < INT64_MIN) return false;
    quot = uint64_t(int64_t(q));
    rem = uint64_t(int64_t(n % d));
  } else {
    int64_t n = int64_t(((hi & mask(w)) << w) | (lo & mask(w)));
    n = (w == 32) ? int64_t(n) : sext(uint64_t(n), 2 * w);
    int64_t q = n / d;
    int64_t lim = int64_t(mask(w) >> 1);
    if (q > lim || q < -lim - 1) return false;
    quot = uint64_t(q) & mask(w);
    rem = uint64_t(n % d) & mask(w);
  }
  return true;
}

inline uint64_t bswap(unsigned w, uint64_t v) {
  uint64_t r = 0;
  for (unsigned i = 0; i < w / 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xFF);
  return r;
}

inline bool cond_holds(uint8_t cc, const Flags& f) {
  bool r;
  switch (cc >> 1) {
    case 0: r = f.of; break;
    case 1: r = f.cf; break;
    case 2: r = f.zf; break;
    case 3: r = f.cf || f.zf; break;
    case 4: r = f.sf; break;
    case 5: r = f.pf; break;
    case 6: r = f.sf != f.of; break;
    default: r = f.zf || (f.sf != f.of); break;
  }
  return (cc & 1) ? !r : r;
}

}  // namespace alu

// AF is architecturally meaningful only for these; harness masks it elsewhere.
inline bool af_defined(Op op) {
  switch (op) {
    case Op::ADD: case Op::ADC: case Op::SUB: case Op::SBB:
    case Op::CMP: case Op::INC: case Op::DEC: case Op::NEG:
      return true;
    default:
      return false;
  }
}

}  // namespace xjp

#include "xjp/isa_codec.hpp"
#include "xjp/isa_exec.hpp"
