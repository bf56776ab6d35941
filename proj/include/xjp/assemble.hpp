#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xjp/common.hpp"
#include "xjp/vmir.hpp"

// Handler selection, bytecode lowering, the stream cipher, and the XJPM
// container.

namespace xjp {

constexpr uint32_t kCellSentinel = 0xFFFFFFFFu;
constexpr size_t kCellSize = 30;  // u16 handler + 3*u64 operands + u32 next

struct HandlerDesc {
  uint16_t id = 0;
  VOp op = VOp::VNOP;
  uint8_t width = 64;
  uint8_t layout = 0;  // number of meaningful operand words
};

inline uint8_t operand_word_count(VOp op) {
  switch (op) {
    case VOp::VNOP: return 0;
    case VOp::VNOT: case VOp::VNEG: case VOp::VBSWAP:
    case VOp::VPUSH: case VOp::VPOP: case VOp::VRET:
    case VOp::VJMP:  // target travels in the next-link
      return 1;
    case VOp::VLIMM: case VOp::VLOADR: case VOp::VSTORER:
    case VOp::VLOADM: case VOp::VSTOREM: case VOp::VBT: case VOp::VEA:
    case VOp::VCALL: case VOp::VTHROW: case VOp::VEXIT:
    case VOp::VNATIVE:  // length+bytes packed across two words
      return 2;
    default:
      return 3;
  }
}

struct HandlerTable {
  std::vector<HandlerDesc> handlers;

  std::optional<uint16_t> find(VOp op, uint8_t width) const {
    for (const HandlerDesc& h : handlers)
      if (h.op == op && h.width == width) return h.id;
    return std::nullopt;
  }
  const HandlerDesc* by_id(uint16_t id) const {
    return id < handlers.size() ? &handlers[id] : nullptr;
  }
  size_t size() const { return handlers.size(); }
};

inline HandlerTable select_handlers(const std::vector<VmirFunction>& fns) {
  std::set<std::pair<uint8_t, uint8_t>> used;  // (vop, width)
  for (const VmirFunction& f : fns)
    for (const VmirBlock& b : f.blocks)
      for (const VmirInst& vi : b.insts)
        used.insert({uint8_t(vi.op), vi.width});
  used.insert({uint8_t(VOp::VNATIVE), 64});
  used.insert({uint8_t(VOp::VEXIT), 64});
  HandlerTable t;
  for (auto [op, w] : used) {
    HandlerDesc d;
    d.id = uint16_t(t.handlers.size());
    d.op = VOp(op);
    d.width = w;
    d.layout = operand_word_count(d.op);
    t.handlers.push_back(d);
  }
  return t;
}

struct BytecodeCell {
  uint16_t handler_id = 0;
  uint64_t w[3] = {0, 0, 0};
  uint32_t next = kCellSentinel;
};

inline void put_cell(std::vector<uint8_t>& out, const BytecodeCell& c) {
  put_u16(out, c.handler_id);
  for (int i = 0; i < 3; ++i) put_u64(out, c.w[i]);
  put_u32(out, c.next);
}

inline BytecodeCell get_cell(const uint8_t* p) {
  BytecodeCell c;
  c.handler_id = uint16_t(p[0] | (p[1] << 8));
  for (int i = 0; i < 3; ++i) {
    uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= uint64_t(p[2 + 8 * i + b]) << (8 * b);
    c.w[i] = v;
  }
  const uint8_t* q = p + 26;
  c.next = uint32_t(q[0]) | (uint32_t(q[1]) << 8) | (uint32_t(q[2]) << 16) |
           (uint32_t(q[3]) << 24);
  return c;
}

// MemForm packed into one operand word: base+1, index+1, scale, disp32.
inline uint64_t pack_memform(const MemForm& m) {
  return uint64_t(uint8_t(m.base + 1)) | (uint64_t(uint8_t(m.index + 1)) << 8) |
         (uint64_t(m.scale) << 16) | (uint64_t(uint32_t(m.disp)) << 32);
}

inline MemForm unpack_memform(uint64_t w) {
  MemForm m;
  m.base = int8_t(uint8_t(w & 0xFF)) - 1;
  m.index = int8_t(uint8_t((w >> 8) & 0xFF)) - 1;
  m.scale = uint8_t((w >> 16) & 0xFF);
  m.disp = int32_t(uint32_t(w >> 32));
  return m;
}

enum class AsmErr : uint8_t {
  None,
  MissingHandler,
  MissingTerminator,
  UnresolvedLabel,
  NativeTooLong,
  ValidationFailure,
};

struct LoweredFunction {
  std::vector<BytecodeCell> cells;
  uint32_t entry_cell = 0;
  std::vector<std::pair<uint64_t, uint32_t>> label_cells;  // source pc -> cell
  AsmErr err = AsmErr::None;

  bool ok() const { return err == AsmErr::None; }
};

// One cell per VmirInst, placed at seeded-shuffled indices; next-links and
// branch/label operands carry cell indices.
inline LoweredFunction lower_to_bytecode(const VmirFunction& f,
                                         const HandlerTable& table,
                                         uint64_t seed) {
  LoweredFunction out;
  struct Lin {
    const VmirInst* vi;
    uint32_t block, offset;
  };
  std::vector<Lin> lin;
  std::map<std::pair<uint32_t, uint32_t>, uint32_t> pos;  // (block,offset)->linear
  std::vector<uint32_t> block_first(f.blocks.size(), 0);
  for (uint32_t b = 0; b < f.blocks.size(); ++b) {
    block_first[b] = uint32_t(lin.size());
    for (uint32_t i = 0; i < f.blocks[b].insts.size(); ++i) {
      pos[{b, i}] = uint32_t(lin.size());
      lin.push_back({&f.blocks[b].insts[i], b, i});
    }
  }
  size_t n = lin.size();
  if (n == 0) {
    out.err = AsmErr::MissingTerminator;
    return out;
  }

  // seeded Fisher-Yates permutation: linear index -> cell index
  std::vector<uint32_t> perm(n);
  for (uint32_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (size_t i = n - 1; i > 0; --i) {
    size_t j = rng.below(i + 1);
    std::swap(perm[i], perm[j]);
  }

  auto label_linear = [&](uint32_t label_id) -> std::optional<uint32_t> {
    if (label_id >= f.labels.size()) return std::nullopt;
    const VmirLabel& l = f.labels[label_id];
    auto it = pos.find({l.block, l.offset});
    if (it != pos.end()) return it->second;
    // label at block end: fall to the next block's first cell
    if (l.block + 1 < f.blocks.size()) return block_first[l.block + 1];
    return std::nullopt;
  };

  out.cells.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    const VmirInst& vi = *lin[i].vi;
    BytecodeCell c;
    auto hid = table.find(vi.op, vi.width);
    if (!hid) {
      out.err = AsmErr::MissingHandler;
      return out;
    }
    c.handler_id = *hid;

    bool terminator = false;
    switch (vi.op) {
      case VOp::VJMP: {
        auto t = label_linear(uint32_t(vi.operands[0].imm));
        if (!t) {
          out.err = AsmErr::UnresolvedLabel;
          return out;
        }
        c.next = perm[*t];
        terminator = true;  // link already points at the target
        break;
      }
      case VOp::VJCC: {
        auto t = label_linear(uint32_t(vi.operands[1].imm));
        auto e = label_linear(uint32_t(vi.operands[2].imm));
        if (!t || !e) {
          out.err = AsmErr::UnresolvedLabel;
          return out;
        }
        c.w[0] = uint64_t(vi.operands[0].imm);
        c.w[1] = perm[*t];
        c.w[2] = perm[*e];
        terminator = true;
        break;
      }
      case VOp::VCALL:
        c.w[0] = vi.operands[0].idx;
        c.w[1] = uint64_t(vi.operands[1].imm);
        terminator = true;
        break;
      case VOp::VRET:
        c.w[0] = uint64_t(vi.operands[0].imm);
        terminator = true;
        break;
      case VOp::VTHROW:
        c.w[0] = uint64_t(vi.operands[0].imm);
        c.w[1] = uint64_t(vi.operands[1].imm);
        terminator = true;
        break;
      case VOp::VEXIT:
        c.w[0] = uint64_t(vi.operands[0].imm);
        if (vi.operands.size() > 1)
          c.w[1] = vi.operands[1].kind == VmirOperand::Kind::VReg
                       ? vi.operands[1].idx
                       : uint64_t(vi.operands[1].imm);
        terminator = true;
        break;
      case VOp::VNATIVE: {
        if (vi.native_bytes.size() > 15) {
          out.err = AsmErr::NativeTooLong;
          return out;
        }
        uint64_t w0 = vi.native_bytes.size();
        for (size_t b = 0; b < vi.native_bytes.size() && b < 7; ++b)
          w0 |= uint64_t(vi.native_bytes[b]) << (8 * (b + 1));
        uint64_t w1 = 0;
        for (size_t b = 7; b < vi.native_bytes.size(); ++b)
          w1 |= uint64_t(vi.native_bytes[b]) << (8 * (b - 7));
        c.w[0] = w0;
        c.w[1] = w1;
        break;
      }
      default:
        for (size_t k = 0; k < vi.operands.size() && k < 3; ++k) {
          const VmirOperand& o = vi.operands[k];
          switch (o.kind) {
            case VmirOperand::Kind::VReg:
            case VmirOperand::Kind::Guest: c.w[k] = o.idx; break;
            case VmirOperand::Kind::Imm: c.w[k] = uint64_t(o.imm); break;
            case VmirOperand::Kind::Mem: c.w[k] = pack_memform(o.mem); break;
            case VmirOperand::Kind::Label: c.w[k] = uint64_t(o.imm); break;
          }
        }
        break;
    }

    if (!terminator) {
      bool last_in_block = lin[i].offset + 1 == f.blocks[lin[i].block].insts.size();
      if (last_in_block) {
        out.err = AsmErr::MissingTerminator;
        return out;
      }
      c.next = perm[i + 1];
    }
    out.cells[perm[i]] = c;
  }

  out.entry_cell = perm[0];
  for (uint32_t id = 0; id < f.labels.size(); ++id) {
    auto l = label_linear(id);
    if (!l) {
      out.err = AsmErr::UnresolvedLabel;
      return out;
    }
    out.label_cells.push_back({f.labels[id].source_pc, perm[*l]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stream cipher. LCG keystream, involutive XOR; `offset` supports windowed
// decryption of a slice starting at that byte position of the stream.

inline void crypt_stream(const uint8_t key[16], uint64_t nonce, uint8_t* data,
                         size_t len, size_t offset = 0) {
  uint64_t x0 = 0;
  for (int i = 0; i < 8; ++i) x0 |= uint64_t(key[i]) << (8 * i);
  x0 ^= nonce;
  constexpr uint64_t kMul = 6364136223846793005ull;
  constexpr uint64_t kAdd = 1442695040888963407ull;
  uint64_t block = ~0ull;  // index of the state currently in x
  uint64_t x = x0;
  for (size_t i = 0; i < len; ++i) {
    size_t s = offset + i;
    uint64_t want = s / 8;
    if (block == ~0ull || want < block) {
      x = x0;
      block = ~0ull;
    }
    while (block == ~0ull ? true : block < want) {
      x = x * kMul + kAdd;
      block = (block == ~0ull) ? 0 : block + 1;
      if (block == want) break;
    }
    uint8_t ks = uint8_t(x >> (8 * (s % 8))) ^ key[s % 16];
    data[i] ^= ks;
  }
}

inline std::vector<uint8_t> crypt_stream(const uint8_t key[16], uint64_t nonce,
                                         const std::vector<uint8_t>& data,
                                         size_t offset = 0) {
  std::vector<uint8_t> out = data;
  if (!out.empty()) crypt_stream(key, nonce, out.data(), out.size(), offset);
  return out;
}

// ---------------------------------------------------------------------------
// Container

constexpr uint16_t kModuleVersion = 1;
constexpr uint16_t kFlagEhProtected = 1;

struct FunctionMapEntry {
  uint64_t function_id = 0;
  uint64_t entry_address = 0;
  FunctionRange range;
  uint32_t entry_cell = 0;
  std::vector<std::pair<uint64_t, uint32_t>> label_cells;  // source pc -> cell
};

struct ProtectedModule {
  uint16_t version = kModuleVersion;
  uint16_t flags = 0;
  uint8_t key[16] = {};
  uint64_t bytecode_nonce = 0;
  uint64_t eh_nonce = 0;
  HandlerTable table;
  std::vector<uint8_t> bytecode_cipher;  // cells ++ fnv64 checksum, encrypted
  std::vector<FunctionMapEntry> functions;
  std::vector<uint8_t> suwd;  // shadow unwind section, plaintext wire format
  std::vector<uint8_t> eehp;  // encrypted EH payload section

  const FunctionMapEntry* find_function(uint64_t id) const {
    for (const auto& f : functions)
      if (f.function_id == id) return &f;
    return nullptr;
  }
  const FunctionMapEntry* function_at_entry(uint64_t addr) const {
    for (const auto& f : functions)
      if (f.entry_address == addr) return &f;
    return nullptr;
  }
  size_t cell_count() const {
    return bytecode_cipher.size() >= 8 ? (bytecode_cipher.size() - 8) / kCellSize
                                       : 0;
  }
  // Decrypts one cell in place (windowed keystream).
  BytecodeCell fetch_cell(uint32_t index) const {
    uint8_t buf[kCellSize];
    size_t off = size_t(index) * kCellSize;
    std::copy(bytecode_cipher.begin() + off,
              bytecode_cipher.begin() + off + kCellSize, buf);
    crypt_stream(key, bytecode_nonce, buf, kCellSize, off);
    return get_cell(buf);
  }
};

enum class ModErr : uint8_t {
  None,
  BadMagic,
  BadVersion,
  SectionOverflow,
  DuplicateSection,
  Truncated,
  ValidationFailure,
};

inline const char* mod_err_name(ModErr e) {
  switch (e) {
    case ModErr::None: return "ok";
    case ModErr::BadMagic: return "BadMagic";
    case ModErr::BadVersion: return "BadVersion";
    case ModErr::SectionOverflow: return "SectionOverflow";
    case ModErr::DuplicateSection: return "DuplicateSection";
    case ModErr::Truncated: return "Truncated";
    case ModErr::ValidationFailure: return "ValidationFailure";
  }
  return "?";
}

namespace detail {

inline std::vector<uint8_t> serialize_htab(const HandlerTable& t) {
  std::vector<uint8_t> out;
  put_u32(out, uint32_t(t.handlers.size()));
  for (const HandlerDesc& h : t.handlers) {
    put_u16(out, h.id);
    put_u8(out, uint8_t(h.op));
    put_u8(out, h.width);
    put_u8(out, h.layout);
  }
  return out;
}

inline bool parse_htab(const std::vector<uint8_t>& in, HandlerTable& t) {
  ByteReader r(in.data(), in.size());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    HandlerDesc h;
    h.id = r.u16();
    uint8_t op = r.u8();
    h.width = r.u8();
    h.layout = r.u8();
    if (!r.ok || op >= kVOpCount) return false;
    h.op = VOp(op);
    t.handlers.push_back(h);
  }
  return r.ok;
}

inline std::vector<uint8_t> serialize_fmap(
    const std::vector<FunctionMapEntry>& fns) {
  std::vector<uint8_t> out;
  put_u32(out, uint32_t(fns.size()));
  for (const auto& f : fns) {
    put_u64(out, f.function_id);
    put_u64(out, f.entry_address);
    put_u64(out, f.range.start_pc);
    put_u64(out, f.range.end_pc);
    put_u32(out, f.entry_cell);
    put_u32(out, uint32_t(f.label_cells.size()));
    for (auto& [pc, cell] : f.label_cells) {
      put_u64(out, pc);
      put_u32(out, cell);
    }
  }
  return out;
}

inline bool parse_fmap(const std::vector<uint8_t>& in,
                       std::vector<FunctionMapEntry>& fns) {
  ByteReader r(in.data(), in.size());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n && r.ok; ++i) {
    FunctionMapEntry f;
    f.function_id = r.u64();
    f.entry_address = r.u64();
    f.range.start_pc = r.u64();
    f.range.end_pc = r.u64();
    f.range.function_id = f.function_id;
    f.entry_cell = r.u32();
    uint32_t ln = r.u32();
    for (uint32_t j = 0; j < ln && r.ok; ++j) {
      uint64_t pc = r.u64();
      uint32_t cell = r.u32();
      f.label_cells.push_back({pc, cell});
    }
    fns.push_back(std::move(f));
  }
  return r.ok;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_module(const ProtectedModule& m) {
  std::vector<uint8_t> sections[5] = {
      detail::serialize_htab(m.table), m.bytecode_cipher,
      detail::serialize_fmap(m.functions), m.suwd, m.eehp};
  static const char* tags[5] = {"HTAB", "BYTC", "FMAP", "SUWD", "EEHP"};

  std::vector<uint8_t> out;
  out.insert(out.end(), {0x58, 0x4A, 0x50, 0x4D});
  put_u16(out, m.version);
  put_u16(out, m.flags);
  out.insert(out.end(), m.key, m.key + 16);
  put_u64(out, m.bytecode_nonce);
  put_u64(out, m.eh_nonce);
  put_u32(out, 5);
  uint64_t off = out.size() + 5 * 20;
  for (int i = 0; i < 5; ++i) {
    out.insert(out.end(), tags[i], tags[i] + 4);
    put_u64(out, off);
    put_u64(out, uint64_t(sections[i].size()));
    off += sections[i].size();
  }
  for (int i = 0; i < 5; ++i)
    out.insert(out.end(), sections[i].begin(), sections[i].end());
  return out;
}

struct ParseModResult {
  ProtectedModule mod;
  ModErr err = ModErr::None;

  bool ok() const { return err == ModErr::None; }
};

inline ParseModResult parse_module(const std::vector<uint8_t>& bytes) {
  ParseModResult res;
  ProtectedModule& m = res.mod;
  ByteReader r(bytes.data(), bytes.size());
  uint8_t magic[4];
  for (auto& b : magic) b = r.u8();
  if (!r.ok || magic[0] != 0x58 || magic[1] != 0x4A || magic[2] != 0x50 ||
      magic[3] != 0x4D) {
    res.err = ModErr::BadMagic;
    return res;
  }
  m.version = r.u16();
  if (r.ok && m.version != kModuleVersion) {
    res.err = ModErr::BadVersion;
    return res;
  }
  m.flags = r.u16();
  for (int i = 0; i < 16; ++i) m.key[i] = r.u8();
  m.bytecode_nonce = r.u64();
  m.eh_nonce = r.u64();
  uint32_t nsec = r.u32();
  if (!r.ok) {
    res.err = ModErr::Truncated;
    return res;
  }
  std::map<std::string, std::vector<uint8_t>> secs;
  for (uint32_t i = 0; i < nsec; ++i) {
    char tag[5] = {};
    for (int j = 0; j < 4; ++j) tag[j] = char(r.u8());
    uint64_t off = r.u64();
    uint64_t size = r.u64();
    if (!r.ok) {
      res.err = ModErr::Truncated;
      return res;
    }
    if (off > bytes.size() || size > bytes.size() - off) {
      res.err = ModErr::SectionOverflow;
      return res;
    }
    if (secs.count(tag)) {
      res.err = ModErr::DuplicateSection;
      return res;
    }
    secs[tag] = std::vector<uint8_t>(bytes.begin() + off,
                                     bytes.begin() + off + size);
  }
  if (!detail::parse_htab(secs["HTAB"], m.table)) {
    res.err = ModErr::Truncated;
    return res;
  }
  m.bytecode_cipher = secs["BYTC"];
  if (!detail::parse_fmap(secs["FMAP"], m.functions)) {
    res.err = ModErr::Truncated;
    return res;
  }
  m.suwd = secs["SUWD"];
  m.eehp = secs["EEHP"];
  return res;
}

// Decrypt-and-validate: checksum intact, every handler-id known, every
// function-map cell index in range.
inline ModErr validate_module(const ProtectedModule& m) {
  if (m.bytecode_cipher.size() < 8 ||
      (m.bytecode_cipher.size() - 8) % kCellSize != 0)
    return ModErr::ValidationFailure;
  std::vector<uint8_t> plain = crypt_stream(m.key, m.bytecode_nonce,
                                            m.bytecode_cipher);
  size_t body = plain.size() - 8;
  uint64_t want = 0;
  for (int i = 0; i < 8; ++i) want |= uint64_t(plain[body + i]) << (8 * i);
  if (fnv1a64(plain.data(), body) != want) return ModErr::ValidationFailure;
  size_t n = body / kCellSize;
  for (size_t i = 0; i < n; ++i) {
    BytecodeCell c = get_cell(plain.data() + i * kCellSize);
    if (!m.table.by_id(c.handler_id)) return ModErr::ValidationFailure;
    if (c.next != kCellSentinel && c.next >= n) return ModErr::ValidationFailure;
  }
  for (const auto& f : m.functions) {
    if (f.entry_cell >= n) return ModErr::ValidationFailure;
    for (auto& [pc, cell] : f.label_cells)
      if (cell >= n) return ModErr::ValidationFailure;
  }
  return ModErr::None;
}

struct AssembleInput {
  const VmirFunction* fn;
  uint64_t entry_address;
};

struct AssembleResult {
  ProtectedModule mod;
  ModErr err = ModErr::None;

  bool ok() const { return err == ModErr::None; }
};

inline AssembleResult assemble_module(const std::vector<AssembleInput>& fns,
                                      const HandlerTable& table,
                                      std::vector<uint8_t> suwd,
                                      std::vector<uint8_t> eehp,
                                      const uint8_t key[16], uint64_t seed,
                                      bool eh_protected = false) {
  AssembleResult res;
  ProtectedModule& m = res.mod;
  std::copy(key, key + 16, m.key);
  Rng rng(sub_seed(seed, "assemble"));
  m.bytecode_nonce = rng.next();
  m.eh_nonce = rng.next();
  m.flags = eh_protected ? kFlagEhProtected : 0;
  m.suwd = std::move(suwd);
  m.eehp = std::move(eehp);

  std::vector<uint8_t> plain;
  for (const AssembleInput& in : fns) {
    LoweredFunction lf =
        lower_to_bytecode(*in.fn, table, sub_seed(seed, "shuffle", in.fn->function_id));
    if (!lf.ok()) {
      res.err = ModErr::ValidationFailure;
      return res;
    }
    uint32_t base = uint32_t(plain.size() / kCellSize);
    for (BytecodeCell c : lf.cells) {
      if (c.next != kCellSentinel) c.next += base;
      const HandlerDesc* h = table.by_id(c.handler_id);
      if (h && h->op == VOp::VJCC) {
        c.w[1] += base;
        c.w[2] += base;
      }
      put_cell(plain, c);
    }
    FunctionMapEntry fe;
    fe.function_id = in.fn->function_id;
    fe.entry_address = in.entry_address;
    fe.range = in.fn->range;
    fe.entry_cell = lf.entry_cell + base;
    for (auto [pc, cell] : lf.label_cells)
      fe.label_cells.push_back({pc, cell + base});
    m.functions.push_back(std::move(fe));
  }
  uint64_t sum = fnv1a64(plain.data(), plain.size());
  put_u64(plain, sum);
  m.table = table;
  m.bytecode_cipher = crypt_stream(m.key, m.bytecode_nonce, plain);
  if (validate_module(m) != ModErr::None) res.err = ModErr::ValidationFailure;
  return res;
}

}  // namespace xjp
