#pragma once

// Byte-level decoder and canonical encoder for the subset ISA.
// Included at the tail of isa.hpp; not meant for standalone inclusion.

#include <cstdint>
#include <optional>
#include <vector>

namespace xjp {

struct DecodeResult {
  Instruction inst;
  uint8_t consumed = 0;  // on error, longest-valid-prefix heuristic (1 byte)
  XKind err = XKind::Ok;

  bool ok() const { return err == XKind::Ok; }
};

namespace detail {

struct Cursor {
  const uint8_t* p;
  size_t avail;
  size_t pos = 0;
  bool truncated = false;

  bool need(size_t n) {
    if (pos + n > avail) {
      truncated = true;
      return false;
    }
    return true;
  }
  uint8_t u8() {
    if (!need(1)) return 0;
    return p[pos++];
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(u8()) << (8 * i);
    return v;
  }
  int8_t s8() { return int8_t(u8()); }
  int32_t s32() { return int32_t(u32()); }
  uint16_t u16() {
    uint16_t v = u8();
    return uint16_t(v | (uint16_t(u8()) << 8));
  }
};

struct Rex {
  bool present = false;
  bool w = false, r = false, x = false, b = false;
};

// ModRM byte plus SIB/displacement. `reg` is the extended reg field;
// `rm` the decoded r/m operand (register or memory).
struct ModRm {
  uint8_t reg = 0;
  Operand rm;
  bool ok = true;
};

inline ModRm parse_modrm(Cursor& c, const Rex& rex) {
  ModRm out;
  uint8_t m = c.u8();
  uint8_t mod = m >> 6, reg = (m >> 3) & 7, rm = m & 7;
  out.reg = reg | (rex.r ? 8 : 0);
  if (mod == 3) {
    out.rm = Operand::make_reg(rm | (rex.b ? 8 : 0));
    return out;
  }
  MemForm mf;
  if (rm == 4) {
    uint8_t sib = c.u8();
    uint8_t ss = sib >> 6, idx = (sib >> 3) & 7, base = sib & 7;
    uint8_t xidx = idx | (rex.x ? 8 : 0);
    if (xidx != RSP) {  // index field 100 without REX.X means "no index"
      mf.index = int8_t(xidx);
      mf.scale = uint8_t(1u << ss);
    }
    if (base == 5 && mod == 0) {
      mf.base = -1;  // disp32, no base
      mf.disp = c.s32();
      out.rm = Operand::make_mem(mf);
      return out;
    }
    mf.base = int8_t(base | (rex.b ? 8 : 0));
  } else if (rm == 5 && mod == 0) {
    out.ok = false;  // RIP-relative: outside the subset
    return out;
  } else {
    mf.base = int8_t(rm | (rex.b ? 8 : 0));
  }
  if (mod == 1) mf.disp = c.s8();
  else if (mod == 2) mf.disp = c.s32();
  out.rm = Operand::make_mem(mf);
  return out;
}

// Byte-register operands 4..7 without REX are AH/CH/DH/BH: not modeled.
inline bool byte_reg_ok(const Operand& o, const Rex& rex) {
  return !(o.is_reg() && o.reg >= 4 && o.reg <= 7 && !rex.present);
}

}  // namespace detail

inline DecodeResult decode(const uint8_t* bytes, size_t avail) {
  using namespace detail;
  DecodeResult res;
  res.consumed = 1;
  if (avail == 0) {
    res.err = XKind::TruncatedInstruction;
    res.consumed = 0;
    return res;
  }
  Cursor c{bytes, avail > 15 ? 15 : avail};
  bool capped = avail > 15;

  Rex rex;
  uint8_t b0 = c.u8();
  if ((b0 & 0xF0) == 0x40) {
    rex.present = true;
    rex.w = b0 & 8;
    rex.r = b0 & 4;
    rex.x = b0 & 2;
    rex.b = b0 & 1;
    b0 = c.u8();
  }

  Instruction& in = res.inst;
  const uint8_t wide = rex.w ? 64 : 32;
  bool bad = false;

  auto grp_op = [](uint8_t g) {
    static const Op ops[8] = {Op::ADD, Op::OR, Op::ADC, Op::SBB,
                              Op::AND, Op::SUB, Op::XOR, Op::CMP};
    return ops[g];
  };
  auto shift_op = [&](uint8_t digit, Op& op) {
    switch (digit) {
      case 0: op = Op::ROL; return true;
      case 1: op = Op::ROR; return true;
      case 4: op = Op::SHL; return true;
      case 5: op = Op::SHR; return true;
      case 7: op = Op::SAR; return true;
      default: return false;
    }
  };

  switch (b0) {
    // Arithmetic groups: 00+8g..03+8g
    case 0x00: case 0x01: case 0x02: case 0x03:
    case 0x08: case 0x09: case 0x0A: case 0x0B:
    case 0x10: case 0x11: case 0x12: case 0x13:
    case 0x18: case 0x19: case 0x1A: case 0x1B:
    case 0x20: case 0x21: case 0x22: case 0x23:
    case 0x28: case 0x29: case 0x2A: case 0x2B:
    case 0x30: case 0x31: case 0x32: case 0x33:
    case 0x38: case 0x39: case 0x3A: case 0x3B: {
      in.opcode = grp_op(b0 >> 3);
      in.width = (b0 & 1) ? wide : 8;
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      Operand regop = Operand::make_reg(mr.reg);
      if (b0 & 2) in.operands = {regop, mr.rm};   // r <- rm
      else in.operands = {mr.rm, regop};          // rm <- r
      if (in.width == 8)
        bad = bad || !byte_reg_ok(in.operands[0], rex) ||
              !byte_reg_ok(in.operands[1], rex);
      break;
    }
    case 0x50: case 0x51: case 0x52: case 0x53:
    case 0x54: case 0x55: case 0x56: case 0x57:
    case 0x58: case 0x59: case 0x5A: case 0x5B:
    case 0x5C: case 0x5D: case 0x5E: case 0x5F: {
      in.opcode = b0 < 0x58 ? Op::PUSH : Op::POP;
      in.width = 64;
      uint8_t r = uint8_t((b0 & 7) | (rex.b ? 8 : 0));
      in.operands = {Operand::make_reg(r)};
      break;
    }
    case 0x63: {  // MOVSXD r64, r/m32
      if (!rex.w) { bad = true; break; }
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.opcode = Op::MOVSX;
      in.width = 64;
      in.src_width = 32;
      in.operands = {Operand::make_reg(mr.reg), mr.rm};
      break;
    }
    case 0x68:
      in.opcode = Op::PUSH;
      in.width = 64;
      in.operands = {Operand::make_imm(c.s32())};
      break;
    case 0x6A:
      in.opcode = Op::PUSH;
      in.width = 64;
      in.operands = {Operand::make_imm(c.s8())};
      break;
    case 0x70: case 0x71: case 0x72: case 0x73:
    case 0x74: case 0x75: case 0x76: case 0x77:
    case 0x78: case 0x79: case 0x7A: case 0x7B:
    case 0x7C: case 0x7D: case 0x7E: case 0x7F:
      in.opcode = Op::JCC;
      in.width = 64;
      in.cc = b0 & 0xF;
      in.operands = {Operand::make_imm(c.s8())};
      break;
    case 0x80: case 0x81: case 0x83: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.opcode = grp_op(mr.reg & 7);
      in.width = b0 == 0x80 ? 8 : wide;
      int64_t imm = b0 == 0x81 ? c.s32() : c.s8();
      in.operands = {mr.rm, Operand::make_imm(imm)};
      if (in.width == 8) bad = bad || !byte_reg_ok(mr.rm, rex);
      if (mr.reg > 7) bad = true;
      break;
    }
    case 0x84: case 0x85: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.opcode = Op::TEST;
      in.width = b0 == 0x84 ? 8 : wide;
      in.operands = {mr.rm, Operand::make_reg(mr.reg)};
      if (in.width == 8)
        bad = bad || !byte_reg_ok(mr.rm, rex) ||
              !byte_reg_ok(in.operands[1], rex);
      break;
    }
    case 0x86: case 0x87: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.opcode = Op::XCHG;
      in.width = b0 == 0x86 ? 8 : wide;
      in.operands = {mr.rm, Operand::make_reg(mr.reg)};
      if (in.width == 8)
        bad = bad || !byte_reg_ok(mr.rm, rex) ||
              !byte_reg_ok(in.operands[1], rex);
      break;
    }
    case 0x88: case 0x89: case 0x8A: case 0x8B: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.opcode = Op::MOV;
      in.width = (b0 & 1) ? wide : 8;
      Operand regop = Operand::make_reg(mr.reg);
      if (b0 & 2) in.operands = {regop, mr.rm};
      else in.operands = {mr.rm, regop};
      if (in.width == 8)
        bad = bad || !byte_reg_ok(in.operands[0], rex) ||
              !byte_reg_ok(in.operands[1], rex);
      break;
    }
    case 0x8D: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || !mr.rm.is_mem();
      in.opcode = Op::LEA;
      in.width = wide;
      in.operands = {Operand::make_reg(mr.reg), mr.rm};
      break;
    }
    case 0x8F: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || (mr.reg & 7) != 0 || !mr.rm.is_mem();
      in.opcode = Op::POP;
      in.width = 64;
      in.operands = {mr.rm};
      break;
    }
    case 0x90:
      if (rex.b) { bad = true; break; }
      in.opcode = Op::NOP;
      in.width = 64;
      break;
    case 0x99:
      in.opcode = rex.w ? Op::CQO : Op::CDQ;
      in.width = rex.w ? 64 : 32;
      break;
    case 0xB0: case 0xB1: case 0xB2: case 0xB3:
    case 0xB4: case 0xB5: case 0xB6: case 0xB7: {
      uint8_t r = (b0 & 7) | (rex.b ? 8 : 0);
      Operand dst = Operand::make_reg(r);
      bad = !byte_reg_ok(dst, rex);
      in.opcode = Op::MOV;
      in.width = 8;
      in.operands = {dst, Operand::make_imm(int64_t(c.u8()))};
      break;
    }
    case 0xB8: case 0xB9: case 0xBA: case 0xBB:
    case 0xBC: case 0xBD: case 0xBE: case 0xBF: {
      uint8_t r = (b0 & 7) | (rex.b ? 8 : 0);
      in.opcode = Op::MOV;
      in.width = wide;
      int64_t imm = rex.w ? int64_t(c.u64()) : int64_t(c.u32());
      in.operands = {Operand::make_reg(r), Operand::make_imm(imm)};
      break;
    }
    case 0xC0: case 0xC1: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || !shift_op(mr.reg & 7, in.opcode);
      in.width = b0 == 0xC0 ? 8 : wide;
      in.operands = {mr.rm, Operand::make_imm(int64_t(c.u8()))};
      if (in.width == 8) bad = bad || !byte_reg_ok(mr.rm, rex);
      break;
    }
    case 0xD0: case 0xD1: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || !shift_op(mr.reg & 7, in.opcode);
      in.width = b0 == 0xD0 ? 8 : wide;
      in.operands = {mr.rm, Operand::make_imm(1)};
      if (in.width == 8) bad = bad || !byte_reg_ok(mr.rm, rex);
      break;
    }
    case 0xD2: case 0xD3: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || !shift_op(mr.reg & 7, in.opcode);
      in.width = b0 == 0xD2 ? 8 : wide;
      in.operands = {mr.rm, Operand::make_reg(RCX)};
      if (in.width == 8) bad = bad || !byte_reg_ok(mr.rm, rex);
      break;
    }
    case 0xC2:
      in.opcode = Op::RET;
      in.width = 64;
      in.operands = {Operand::make_imm(int64_t(c.u16()))};
      break;
    case 0xC3:
      in.opcode = Op::RET;
      in.width = 64;
      break;
    case 0xC6: case 0xC7: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || (mr.reg & 7) != 0;
      in.opcode = Op::MOV;
      in.width = b0 == 0xC6 ? 8 : wide;
      int64_t imm = b0 == 0xC6 ? int64_t(c.u8()) : int64_t(c.s32());
      in.operands = {mr.rm, Operand::make_imm(imm)};
      if (in.width == 8) bad = bad || !byte_reg_ok(mr.rm, rex);
      break;
    }
    case 0xC9:
      in.opcode = Op::LEAVE;
      in.width = 64;
      break;
    case 0xCC:
      in.opcode = Op::INT3;
      in.width = 64;
      break;
    case 0xE8:
      in.opcode = Op::CALL;
      in.width = 64;
      in.operands = {Operand::make_imm(c.s32())};
      break;
    case 0xE9:
      in.opcode = Op::JMP;
      in.width = 64;
      in.operands = {Operand::make_imm(c.s32())};
      break;
    case 0xEB:
      in.opcode = Op::JMP;
      in.width = 64;
      in.operands = {Operand::make_imm(c.s8())};
      break;
    case 0xF6: case 0xF7: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.width = b0 == 0xF6 ? 8 : wide;
      switch (mr.reg & 7) {
        case 0:
          in.opcode = Op::TEST;
          in.operands = {mr.rm, Operand::make_imm(
                                    b0 == 0xF6 ? int64_t(c.u8()) : c.s32())};
          break;
        case 2: in.opcode = Op::NOT; in.operands = {mr.rm}; break;
        case 3: in.opcode = Op::NEG; in.operands = {mr.rm}; break;
        case 4: in.opcode = Op::MUL; in.operands = {mr.rm}; break;
        case 5: in.opcode = Op::IMUL; in.operands = {mr.rm}; break;
        case 6: in.opcode = Op::DIV; in.operands = {mr.rm}; break;
        case 7: in.opcode = Op::IDIV; in.operands = {mr.rm}; break;
        default: bad = true;
      }
      if (in.width == 8 && !in.operands.empty())
        bad = bad || !byte_reg_ok(mr.rm, rex);
      break;
    }
    case 0xFE: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok || (mr.reg & 7) > 1 || !byte_reg_ok(mr.rm, rex);
      in.opcode = (mr.reg & 7) == 0 ? Op::INC : Op::DEC;
      in.width = 8;
      in.operands = {mr.rm};
      break;
    }
    case 0xFF: {
      auto mr = parse_modrm(c, rex);
      bad = !mr.ok;
      in.width = wide;
      switch (mr.reg & 7) {
        case 0: in.opcode = Op::INC; in.operands = {mr.rm}; break;
        case 1: in.opcode = Op::DEC; in.operands = {mr.rm}; break;
        case 2: in.opcode = Op::CALL; in.width = 64; in.operands = {mr.rm}; break;
        case 4: in.opcode = Op::JMP; in.width = 64; in.operands = {mr.rm}; break;
        case 6: in.opcode = Op::PUSH; in.width = 64; in.operands = {mr.rm}; break;
        default: bad = true;
      }
      break;
    }
    case 0x0F: {
      uint8_t b1 = c.u8();
      if (b1 >= 0x40 && b1 <= 0x4F) {
        auto mr = parse_modrm(c, rex);
        bad = !mr.ok;
        in.opcode = Op::CMOVCC;
        in.cc = b1 & 0xF;
        in.width = wide;
        in.operands = {Operand::make_reg(mr.reg), mr.rm};
      } else if (b1 >= 0x80 && b1 <= 0x8F) {
        in.opcode = Op::JCC;
        in.cc = b1 & 0xF;
        in.width = 64;
        in.operands = {Operand::make_imm(c.s32())};
      } else if (b1 >= 0x90 && b1 <= 0x9F) {
        auto mr = parse_modrm(c, rex);
        bad = !mr.ok || !byte_reg_ok(mr.rm, rex);
        in.opcode = Op::SETCC;
        in.cc = b1 & 0xF;
        in.width = 8;
        in.operands = {mr.rm};
      } else if (b1 == 0xA3) {
        auto mr = parse_modrm(c, rex);
        bad = !mr.ok;
        in.opcode = Op::BT;
        in.width = wide;
        in.operands = {mr.rm, Operand::make_reg(mr.reg)};
      } else if (b1 == 0xAF) {
        auto mr = parse_modrm(c, rex);
        bad = !mr.ok;
        in.opcode = Op::IMUL;
        in.width = wide;
        in.operands = {Operand::make_reg(mr.reg), mr.rm};
      } else if (b1 == 0xB6 || b1 == 0xBE) {
        auto mr = parse_modrm(c, rex);
        bad = !mr.ok;
        if (mr.rm.is_reg() && mr.rm.reg >= 4 && mr.rm.reg <= 7 && !rex.present)
          bad = true;
        in.opcode = b1 == 0xB6 ? Op::MOVZX : Op::MOVSX;
        in.width = wide;
        in.src_width = 8;
        in.operands = {Operand::make_reg(mr.reg), mr.rm};
      } else if (b1 == 0xBA) {
        auto mr = parse_modrm(c, rex);
        bad = !mr.ok || (mr.reg & 7) != 4;
        in.opcode = Op::BT;
        in.width = wide;
        in.operands = {mr.rm, Operand::make_imm(int64_t(c.u8()))};
      } else if (b1 >= 0xC8 && b1 <= 0xCF) {
        in.opcode = Op::BSWAP;
        in.width = wide;
        in.operands = {Operand::make_reg((b1 & 7) | (rex.b ? 8 : 0))};
      } else {
        bad = true;
      }
      break;
    }
    default:
      bad = true;
  }

  if (c.truncated) {
    if (capped) {
      // 15 decodable bytes exhausted mid-encoding: not a subset instruction.
      res.err = XKind::UnknownEncoding;
    } else {
      res.err = XKind::TruncatedInstruction;
    }
    return res;
  }
  if (bad) {
    res.err = XKind::UnknownEncoding;
    return res;
  }
  res.inst.raw_length = uint8_t(c.pos);
  res.consumed = uint8_t(c.pos);
  return res;
}

inline DecodeResult decode(const std::vector<uint8_t>& image, size_t offset) {
  if (offset >= image.size()) {
    DecodeResult r;
    r.err = XKind::TruncatedInstruction;
    return r;
  }
  return decode(image.data() + offset, image.size() - offset);
}

// ---------------------------------------------------------------------------
// Canonical encoder. When several encodings exist the ModRM form is chosen;
// decode(encode(i)) is semantically equal to i.

namespace detail {

class Enc {
public:
  explicit Enc(unsigned width) { rex_w_ = width == 64; }

  void set_regfield(uint8_t r) {
    regfield_ = r & 7;
    rex_r_ = r >= 8;
  }

  bool set_rm(const Operand& o, unsigned width) {
    if (o.is_reg()) {
      mod_ = 3;
      rm_ = o.reg & 7;
      rex_b_ = o.reg >= 8;
      if (width == 8 && o.reg >= 4 && o.reg <= 7) force_rex_ = true;
      return true;
    }
    if (!o.is_mem()) return false;
    const MemForm& m = o.mem;
    if (m.index == RSP) return false;
    bool need_sib = m.index >= 0 || m.base < 0 || (m.base & 7) == 4;
    if (!need_sib) {
      rm_ = m.base & 7;
      rex_b_ = m.base >= 8;
      if (m.disp == 0 && (m.base & 7) != 5) {
        mod_ = 0;
      } else if (m.disp >= -128 && m.disp <= 127) {
        mod_ = 1;
        disp_ = m.disp;
        disp_size_ = 1;
      } else {
        mod_ = 2;
        disp_ = m.disp;
        disp_size_ = 4;
      }
      return true;
    }
    rm_ = 4;
    has_sib_ = true;
    uint8_t ss = m.scale == 8 ? 3 : m.scale == 4 ? 2 : m.scale == 2 ? 1 : 0;
    uint8_t idx = 4;  // none
    if (m.index >= 0) {
      idx = m.index & 7;
      rex_x_ = m.index >= 8;
      if ((m.index & 15) == RSP) return false;
    }
    if (m.base < 0) {
      sib_ = uint8_t((ss << 6) | (idx << 3) | 5);
      mod_ = 0;
      disp_ = m.disp;
      disp_size_ = 4;
      return true;
    }
    sib_ = uint8_t((ss << 6) | (idx << 3) | (m.base & 7));
    rex_b_ = m.base >= 8;
    if (m.disp == 0 && (m.base & 7) != 5) {
      mod_ = 0;
    } else if (m.disp >= -128 && m.disp <= 127) {
      mod_ = 1;
      disp_ = m.disp;
      disp_size_ = 1;
    } else {
      mod_ = 2;
      disp_ = m.disp;
      disp_size_ = 4;
    }
    return true;
  }

  void check_byte_reg(uint8_t r, unsigned width) {
    if (width == 8 && r >= 4 && r <= 7) force_rex_ = true;
  }

  void emit(std::vector<uint8_t>& out, std::initializer_list<uint8_t> opcode,
            bool has_modrm) const {
    uint8_t rex = 0x40;
    if (rex_w_) rex |= 8;
    if (rex_r_) rex |= 4;
    if (rex_x_) rex |= 2;
    if (rex_b_) rex |= 1;
    if (rex != 0x40 || force_rex_) out.push_back(rex);
    for (uint8_t b : opcode) out.push_back(b);
    if (has_modrm) {
      out.push_back(uint8_t((mod_ << 6) | (regfield_ << 3) | rm_));
      if (has_sib_) out.push_back(sib_);
      for (int i = 0; i < disp_size_; ++i)
        out.push_back(uint8_t(uint32_t(disp_) >> (8 * i)));
    }
  }

  bool rex_b() const { return rex_b_; }

private:
  uint8_t mod_ = 3, regfield_ = 0, rm_ = 0, sib_ = 0;
  bool has_sib_ = false;
  int32_t disp_ = 0;
  int disp_size_ = 0;
  bool rex_w_ = false, rex_r_ = false, rex_x_ = false, rex_b_ = false;
  bool force_rex_ = false;
};

inline void put_imm(std::vector<uint8_t>& out, int64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(uint8_t(uint64_t(v) >> (8 * i)));
}

inline bool fits_s8(int64_t v) { return v >= -128 && v <= 127; }
inline bool fits_s32(int64_t v) { return v >= INT32_MIN && v <= INT32_MAX; }

}  // namespace detail

// Returns std::nullopt when the operand combination is outside the subset
// (Unencodable).
inline std::optional<std::vector<uint8_t>> encode(const Instruction& in) {
  using namespace detail;
  std::vector<uint8_t> out;
  const unsigned w = in.width;
  if (w != 8 && w != 32 && w != 64) return std::nullopt;

  auto nops = in.operands.size();
  auto mem_count = [&] {
    int n = 0;
    for (auto& o : in.operands) n += o.is_mem();
    return n;
  };
  if (mem_count() > 1) return std::nullopt;  // x86 forbids two memory operands
  for (auto& o : in.operands)
    if (o.is_mem() && o.mem.index == RSP) return std::nullopt;

  auto enc_mr = [&](uint8_t op8, uint8_t opw, const Operand& rm,
                    uint8_t regfield_or_reg, bool reg_is_field) -> bool {
    Enc e(w);
    if (reg_is_field) {
      e.set_regfield(regfield_or_reg);
    } else {
      e.set_regfield(regfield_or_reg);
      e.check_byte_reg(regfield_or_reg, w);
    }
    if (!e.set_rm(rm, w)) return false;
    e.emit(out, {w == 8 ? op8 : opw}, true);
    return true;
  };
  auto enc_mr_0f = [&](uint8_t op, const Operand& rm, uint8_t reg) -> bool {
    Enc e(w);
    e.set_regfield(reg);
    e.check_byte_reg(reg, w);
    if (!e.set_rm(rm, w)) return false;
    e.emit(out, {0x0F, op}, true);
    return true;
  };

  switch (in.opcode) {
    case Op::ADD: case Op::OR: case Op::ADC: case Op::SBB:
    case Op::AND: case Op::SUB: case Op::XOR: case Op::CMP: {
      uint8_t digit;
      switch (in.opcode) {
        case Op::ADD: digit = 0; break;
        case Op::OR: digit = 1; break;
        case Op::ADC: digit = 2; break;
        case Op::SBB: digit = 3; break;
        case Op::AND: digit = 4; break;
        case Op::SUB: digit = 5; break;
        case Op::XOR: digit = 6; break;
        default: digit = 7; break;
      }
      if (nops != 2) return std::nullopt;
      const Operand& dst = in.operands[0];
      const Operand& src = in.operands[1];
      if (src.is_imm()) {
        if (!dst.is_reg() && !dst.is_mem()) return std::nullopt;
        Enc e(w);
        e.set_regfield(digit);
        if (!e.set_rm(dst, w)) return std::nullopt;
        if (w == 8) {
          e.emit(out, {0x80}, true);
          put_imm(out, src.imm, 1);
        } else if (fits_s8(src.imm)) {
          e.emit(out, {0x83}, true);
          put_imm(out, src.imm, 1);
        } else if (fits_s32(src.imm)) {
          e.emit(out, {0x81}, true);
          put_imm(out, src.imm, 4);
        } else {
          return std::nullopt;
        }
        return out;
      }
      if (src.is_reg() && (dst.is_reg() || dst.is_mem())) {
        if (!enc_mr(uint8_t(digit * 8), uint8_t(digit * 8 + 1), dst, src.reg, false))
          return std::nullopt;
        return out;
      }
      if (src.is_mem() && dst.is_reg()) {
        if (!enc_mr(uint8_t(digit * 8 + 2), uint8_t(digit * 8 + 3), src, dst.reg, false))
          return std::nullopt;
        return out;
      }
      return std::nullopt;
    }

    case Op::TEST: {
      if (nops != 2) return std::nullopt;
      const Operand& a = in.operands[0];
      const Operand& b = in.operands[1];
      if (b.is_imm()) {
        if (w != 8 && !fits_s32(b.imm)) return std::nullopt;
        Enc e(w);
        e.set_regfield(0);
        if (!e.set_rm(a, w)) return std::nullopt;
        e.emit(out, {w == 8 ? uint8_t(0xF6) : uint8_t(0xF7)}, true);
        put_imm(out, b.imm, w == 8 ? 1 : 4);
        return out;
      }
      if (b.is_reg()) {
        if (!enc_mr(0x84, 0x85, a, b.reg, false)) return std::nullopt;
        return out;
      }
      return std::nullopt;
    }

    case Op::MOV: {
      if (nops != 2) return std::nullopt;
      const Operand& dst = in.operands[0];
      const Operand& src = in.operands[1];
      if (src.is_imm()) {
        if (w == 64 && !fits_s32(src.imm)) {
          if (!dst.is_reg()) return std::nullopt;
          Enc e(w);
          e.set_regfield(0);
          Operand r = dst;
          if (!e.set_rm(r, w)) return std::nullopt;
          // B8+r form: reuse rex bits computed from rm
          out.clear();
          uint8_t rex = 0x48 | (dst.reg >= 8 ? 1 : 0);
          out.push_back(rex);
          out.push_back(uint8_t(0xB8 + (dst.reg & 7)));
          put_imm(out, src.imm, 8);
          return out;
        }
        Enc e(w);
        e.set_regfield(0);
        if (!e.set_rm(dst, w)) return std::nullopt;
        e.emit(out, {w == 8 ? uint8_t(0xC6) : uint8_t(0xC7)}, true);
        put_imm(out, src.imm, w == 8 ? 1 : 4);
        return out;
      }
      if (src.is_reg() && (dst.is_reg() || dst.is_mem())) {
        if (!enc_mr(0x88, 0x89, dst, src.reg, false)) return std::nullopt;
        return out;
      }
      if (src.is_mem() && dst.is_reg()) {
        if (!enc_mr(0x8A, 0x8B, src, dst.reg, false)) return std::nullopt;
        return out;
      }
      return std::nullopt;
    }

    case Op::MOVZX: case Op::MOVSX: {
      if (nops != 2 || !in.operands[0].is_reg()) return std::nullopt;
      if (w != 32 && w != 64) return std::nullopt;
      const Operand& src = in.operands[1];
      if (in.src_width == 8) {
        if (src.is_reg() && src.reg >= 4 && src.reg <= 7) {
          // encodable, REX makes these SPL..DIL
        }
        Enc e(w);
        e.set_regfield(in.operands[0].reg);
        if (!e.set_rm(src, 8)) return std::nullopt;
        e.emit(out, {0x0F, in.opcode == Op::MOVZX ? uint8_t(0xB6) : uint8_t(0xBE)},
               true);
        return out;
      }
      if (in.src_width == 32 && in.opcode == Op::MOVSX && w == 64) {
        Enc e(w);
        e.set_regfield(in.operands[0].reg);
        if (!e.set_rm(src, 32)) return std::nullopt;
        e.emit(out, {0x63}, true);
        return out;
      }
      return std::nullopt;
    }

    case Op::LEA: {
      if (nops != 2 || !in.operands[0].is_reg() || !in.operands[1].is_mem())
        return std::nullopt;
      if (w == 8) return std::nullopt;
      Enc e(w);
      e.set_regfield(in.operands[0].reg);
      if (!e.set_rm(in.operands[1], w)) return std::nullopt;
      e.emit(out, {0x8D}, true);
      return out;
    }

    case Op::XCHG: {
      if (nops != 2) return std::nullopt;
      const Operand& a = in.operands[0];
      const Operand& b = in.operands[1];
      if (b.is_reg() && (a.is_reg() || a.is_mem())) {
        if (!enc_mr(0x86, 0x87, a, b.reg, false)) return std::nullopt;
        return out;
      }
      if (a.is_reg() && b.is_mem()) {
        if (!enc_mr(0x86, 0x87, b, a.reg, false)) return std::nullopt;
        return out;
      }
      return std::nullopt;
    }

    case Op::INC: case Op::DEC: {
      if (nops != 1) return std::nullopt;
      Enc e(w);
      e.set_regfield(in.opcode == Op::INC ? 0 : 1);
      if (!e.set_rm(in.operands[0], w)) return std::nullopt;
      e.emit(out, {w == 8 ? uint8_t(0xFE) : uint8_t(0xFF)}, true);
      return out;
    }

    case Op::SHL: case Op::SHR: case Op::SAR: case Op::ROL: case Op::ROR: {
      if (nops != 2) return std::nullopt;
      uint8_t digit = in.opcode == Op::ROL ? 0
                      : in.opcode == Op::ROR ? 1
                      : in.opcode == Op::SHL ? 4
                      : in.opcode == Op::SHR ? 5 : 7;
      const Operand& cnt = in.operands[1];
      Enc e(w);
      e.set_regfield(digit);
      if (!e.set_rm(in.operands[0], w)) return std::nullopt;
      if (cnt.is_imm()) {
        e.emit(out, {w == 8 ? uint8_t(0xC0) : uint8_t(0xC1)}, true);
        put_imm(out, cnt.imm & 0xFF, 1);
        return out;
      }
      if (cnt.is_reg() && cnt.reg == RCX) {
        e.emit(out, {w == 8 ? uint8_t(0xD2) : uint8_t(0xD3)}, true);
        return out;
      }
      return std::nullopt;
    }

    case Op::CDQ:
      out.push_back(0x99);
      return out;
    case Op::CQO:
      out.push_back(0x48);
      out.push_back(0x99);
      return out;

    case Op::PUSH: {
      if (nops != 1) return std::nullopt;
      const Operand& o = in.operands[0];
      if (o.is_imm()) {
        if (!fits_s32(o.imm)) return std::nullopt;
        out.push_back(0x68);
        put_imm(out, o.imm, 4);
        return out;
      }
      if (o.is_reg()) {
        if (o.reg >= 8) out.push_back(0x41);
        out.push_back(uint8_t(0x50 + (o.reg & 7)));
        return out;
      }
      Enc e(32);  // width prefixless; 64-bit implied
      e.set_regfield(6);
      if (!e.set_rm(o, 64)) return std::nullopt;
      e.emit(out, {0xFF}, true);
      return out;
    }
    case Op::POP: {
      if (nops != 1) return std::nullopt;
      const Operand& o = in.operands[0];
      if (o.is_reg()) {
        if (o.reg >= 8) out.push_back(0x41);
        out.push_back(uint8_t(0x58 + (o.reg & 7)));
        return out;
      }
      if (o.is_mem()) {
        Enc e(32);
        e.set_regfield(0);
        if (!e.set_rm(o, 64)) return std::nullopt;
        e.emit(out, {0x8F}, true);
        return out;
      }
      return std::nullopt;
    }

    case Op::CALL: {
      if (nops != 1) return std::nullopt;
      const Operand& o = in.operands[0];
      if (o.is_imm()) {
        if (!fits_s32(o.imm)) return std::nullopt;
        out.push_back(0xE8);
        put_imm(out, o.imm, 4);
        return out;
      }
      Enc e(32);
      e.set_regfield(2);
      if (!e.set_rm(o, 64)) return std::nullopt;
      e.emit(out, {0xFF}, true);
      return out;
    }

    case Op::RET:
      if (nops == 0) {
        out.push_back(0xC3);
        return out;
      }
      if (nops == 1 && in.operands[0].is_imm()) {
        out.push_back(0xC2);
        put_imm(out, in.operands[0].imm, 2);
        return out;
      }
      return std::nullopt;

    case Op::JMP: {
      if (nops != 1) return std::nullopt;
      const Operand& o = in.operands[0];
      if (o.is_imm()) {
        if (!fits_s32(o.imm)) return std::nullopt;
        out.push_back(0xE9);
        put_imm(out, o.imm, 4);
        return out;
      }
      Enc e(32);
      e.set_regfield(4);
      if (!e.set_rm(o, 64)) return std::nullopt;
      e.emit(out, {0xFF}, true);
      return out;
    }

    case Op::JCC:
      if (nops != 1 || !in.operands[0].is_imm() || in.cc > 15) return std::nullopt;
      out.push_back(0x0F);
      out.push_back(uint8_t(0x80 + in.cc));
      put_imm(out, in.operands[0].imm, 4);
      return out;

    case Op::SETCC: {
      if (nops != 1 || in.cc > 15) return std::nullopt;
      Enc e(8);
      e.set_regfield(0);
      if (!e.set_rm(in.operands[0], 8)) return std::nullopt;
      e.emit(out, {0x0F, uint8_t(0x90 + in.cc)}, true);
      return out;
    }

    case Op::CMOVCC: {
      if (nops != 2 || !in.operands[0].is_reg() || in.cc > 15 || w == 8)
        return std::nullopt;
      Enc e(w);
      e.set_regfield(in.operands[0].reg);
      if (!e.set_rm(in.operands[1], w)) return std::nullopt;
      e.emit(out, {0x0F, uint8_t(0x40 + in.cc)}, true);
      return out;
    }

    case Op::NOP:
      out.push_back(0x90);
      return out;
    case Op::INT3:
      out.push_back(0xCC);
      return out;
    case Op::LEAVE:
      out.push_back(0xC9);
      return out;

    case Op::BSWAP: {
      if (nops != 1 || !in.operands[0].is_reg() || w == 8) return std::nullopt;
      uint8_t rex = 0x40;
      if (w == 64) rex |= 8;
      if (in.operands[0].reg >= 8) rex |= 1;
      if (rex != 0x40) out.push_back(rex);
      out.push_back(0x0F);
      out.push_back(uint8_t(0xC8 + (in.operands[0].reg & 7)));
      return out;
    }

    case Op::BT: {
      if (nops != 2 || w == 8) return std::nullopt;
      const Operand& src = in.operands[1];
      if (src.is_reg()) {
        if (!enc_mr_0f(0xA3, in.operands[0], src.reg)) return std::nullopt;
        return out;
      }
      if (src.is_imm()) {
        Enc e(w);
        e.set_regfield(4);
        if (!e.set_rm(in.operands[0], w)) return std::nullopt;
        e.emit(out, {0x0F, 0xBA}, true);
        put_imm(out, src.imm & 0xFF, 1);
        return out;
      }
      return std::nullopt;
    }

    default:
      break;
  }

  // NOT / NEG / MUL / IMUL / DIV / IDIV via F6/F7, plus IMUL r, r/m.
  switch (in.opcode) {
    case Op::NOT: case Op::NEG: case Op::MUL: case Op::DIV: case Op::IDIV: {
      if (nops != 1) return std::nullopt;
      uint8_t digit = in.opcode == Op::NOT ? 2
                      : in.opcode == Op::NEG ? 3
                      : in.opcode == Op::MUL ? 4
                      : in.opcode == Op::DIV ? 6 : 7;
      Enc e(w);
      e.set_regfield(digit);
      if (!e.set_rm(in.operands[0], w)) return std::nullopt;
      e.emit(out, {w == 8 ? uint8_t(0xF6) : uint8_t(0xF7)}, true);
      return out;
    }
    case Op::IMUL: {
      if (nops == 1) {
        Enc e(w);
        e.set_regfield(5);
        if (!e.set_rm(in.operands[0], w)) return std::nullopt;
        e.emit(out, {w == 8 ? uint8_t(0xF6) : uint8_t(0xF7)}, true);
        return out;
      }
      if (nops == 2 && in.operands[0].is_reg() && w != 8) {
        Enc e(w);
        e.set_regfield(in.operands[0].reg);
        if (!e.set_rm(in.operands[1], w)) return std::nullopt;
        e.emit(out, {0x0F, 0xAF}, true);
        return out;
      }
      return std::nullopt;
    }
    default:
      return std::nullopt;
  }
}

}  // namespace xjp
