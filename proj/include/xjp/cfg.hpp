#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <vector>

#include "xjp/isa.hpp"

// Per-function CFG recovery: recursive-descent disassembly over a loaded
// code image, jump-table resolution, and tail-call classification against
// the function's declared address range.

namespace xjp {

struct FunctionRange {
  uint64_t start_pc = 0;
  uint64_t end_pc = 0;  // exclusive
  uint64_t function_id = 0;

  bool contains(uint64_t pc) const { return pc >= start_pc && pc < end_pc; }

  bool operator==(const FunctionRange&) const = default;
};

struct DecodedInst {
  uint64_t pc = 0;
  Instruction inst;
};

struct BasicBlock {
  uint64_t start_pc = 0;
  std::vector<DecodedInst> insts;
  BranchInfo terminator;
  std::vector<uint64_t> successors;  // block start pcs

  uint64_t end_pc() const {
    if (insts.empty()) return start_pc;
    return insts.back().pc + insts.back().inst.raw_length;
  }
};

struct JumpTableRecord {
  uint64_t jump_pc = 0;
  uint64_t table_addr = 0;
  std::vector<uint64_t> targets;
};

struct ControlFlowGraph {
  FunctionRange range;
  uint64_t entry_pc = 0;
  std::map<uint64_t, BasicBlock> blocks;  // keyed by start pc
  std::vector<uint64_t> tail_call_targets;
  std::vector<JumpTableRecord> jump_tables;
};

enum class CfgErr : uint8_t {
  None,
  DecodeFailure,
  TargetOutOfImage,
  NoTablePattern,
  EmptyTable,
};

struct CfgResult {
  ControlFlowGraph cfg;
  CfgErr err = CfgErr::None;
  uint64_t err_pc = 0;

  bool ok() const { return err == CfgErr::None; }
};

enum class JumpClass : uint8_t { LocalJump, TailCall };

inline JumpClass classify_jump(uint64_t target, const FunctionRange& range) {
  return range.contains(target) ? JumpClass::LocalJump : JumpClass::TailCall;
}

struct JumpTableResult {
  std::vector<uint64_t> targets;
  uint64_t table_addr = 0;
  CfgErr err = CfgErr::None;

  bool ok() const { return err == CfgErr::None; }
};

// Recognized shape: indirect JMP through [index*8 + table_addr] with no base
// register. Entries are 64-bit absolute addresses read until one falls
// outside the function range (or the hard cap).
inline JumpTableResult resolve_jump_table(const MachineEnv& env,
                                          const Instruction& jump,
                                          const FunctionRange& range) {
  constexpr unsigned kMaxEntries = 1024;
  JumpTableResult res;
  if (jump.opcode != Op::JMP || jump.operands.empty() ||
      !jump.operands[0].is_mem()) {
    res.err = CfgErr::NoTablePattern;
    return res;
  }
  const MemForm& m = jump.operands[0].mem;
  if (m.base >= 0 || m.index < 0 || m.scale != 8) {
    res.err = CfgErr::NoTablePattern;
    return res;
  }
  res.table_addr = uint64_t(int64_t(m.disp));
  for (unsigned i = 0; i < kMaxEntries; ++i) {
    uint64_t entry;
    if (!env.read(res.table_addr + 8 * i, 8, entry).ok()) break;
    if (!range.contains(entry)) break;
    res.targets.push_back(entry);
  }
  if (res.targets.empty()) res.err = CfgErr::EmptyTable;
  return res;
}

namespace detail {

struct NonReturningSet {
  std::set<uint64_t> entries;
  bool contains(uint64_t pc) const { return entries.count(pc) != 0; }
};

}  // namespace detail

// Recursive-descent recovery. `non_returning` lists entry addresses of
// callees declared non-returning in the manifest; a CALL to one of them
// terminates linear flow.
inline CfgResult recover_function(const MachineEnv& env,
                                  const FunctionRange& range,
                                  const std::set<uint64_t>& non_returning = {}) {
  CfgResult res;
  ControlFlowGraph& g = res.cfg;
  g.range = range;
  g.entry_pc = range.start_pc;

  std::set<uint64_t> block_starts{range.start_pc};
  std::deque<uint64_t> work{range.start_pc};
  std::set<uint64_t> inst_starts;  // every decoded instruction pc
  std::set<uint64_t> seen_tables;

  auto fail = [&](CfgErr e, uint64_t pc) {
    res.err = e;
    res.err_pc = pc;
    return res;
  };

  // First pass: discover instruction runs and block leaders.
  struct Run {
    uint64_t start;
    std::vector<DecodedInst> insts;
    BranchInfo term;
    std::vector<uint64_t> succ;
    bool tail_call = false;
    uint64_t tail_target = 0;
  };
  std::map<uint64_t, Run> runs;

  while (!work.empty()) {
    uint64_t pc = work.front();
    work.pop_front();
    if (inst_starts.count(pc)) continue;  // covered by an earlier run
    if (!range.contains(pc)) return fail(CfgErr::TargetOutOfImage, pc);

    Run run;
    run.start = pc;
    bool open = true;
    while (open) {
      if (!range.contains(pc)) return fail(CfgErr::TargetOutOfImage, pc);
      if (pc != run.start && inst_starts.count(pc)) {
        // Fell into already-decoded code: close with a fallthrough edge.
        run.term = BranchInfo{};
        run.succ = {pc};
        block_starts.insert(pc);
        break;
      }
      std::vector<uint8_t> window;
      if (!env.fetch(pc, 15, window).ok())
        return fail(CfgErr::DecodeFailure, pc);
      DecodeResult d = decode(window.data(), window.size());
      if (!d.ok()) return fail(CfgErr::DecodeFailure, pc);
      inst_starts.insert(pc);
      run.insts.push_back({pc, d.inst});
      BranchInfo b = branch_info(d.inst, pc);
      uint64_t next = pc + d.inst.raw_length;
      using K = BranchInfo::Kind;
      switch (b.kind) {
        case K::Fallthrough:
          pc = next;
          continue;
        case K::CallDirect:
          if (non_returning.count(b.target)) {
            run.term = b;
            open = false;
            break;
          }
          pc = next;
          continue;
        case K::CallIndirect:
          pc = next;
          continue;
        case K::DirectJump: {
          if (classify_jump(b.target, range) == JumpClass::LocalJump) {
            run.term = b;
            run.succ = {b.target};
            block_starts.insert(b.target);
            work.push_back(b.target);
          } else {
            run.term = b;
            run.tail_call = true;
            run.tail_target = b.target;
          }
          open = false;
          break;
        }
        case K::ConditionalBranch: {
          run.term = b;
          if (classify_jump(b.target, range) == JumpClass::LocalJump) {
            run.succ.push_back(b.target);
            block_starts.insert(b.target);
            work.push_back(b.target);
          } else {
            run.tail_call = true;
            run.tail_target = b.target;
          }
          run.succ.push_back(b.fallthrough);
          block_starts.insert(b.fallthrough);
          work.push_back(b.fallthrough);
          open = false;
          break;
        }
        case K::IndirectJump: {
          JumpTableResult jt = resolve_jump_table(env, d.inst, range);
          if (!jt.ok())
            return fail(jt.err == CfgErr::NoTablePattern ? CfgErr::NoTablePattern
                                                         : CfgErr::EmptyTable,
                        pc);
          run.term = b;
          if (!seen_tables.count(jt.table_addr)) {
            seen_tables.insert(jt.table_addr);
            g.jump_tables.push_back({pc, jt.table_addr, jt.targets});
          }
          for (uint64_t t : jt.targets) {
            run.succ.push_back(t);
            block_starts.insert(t);
            work.push_back(t);
          }
          open = false;
          break;
        }
        case K::Return:
        case K::Barrier:
          run.term = b;
          open = false;
          break;
      }
    }
    runs[run.start] = std::move(run);
  }

  // Second pass: split runs at every discovered leader so no block overlaps
  // another and only last instructions transfer control.
  for (auto& [start, run] : runs) {
    std::vector<std::vector<DecodedInst>> pieces;
    std::vector<DecodedInst> cur;
    for (auto& di : run.insts) {
      if (!cur.empty() && block_starts.count(di.pc)) {
        pieces.push_back(std::move(cur));
        cur.clear();
      }
      cur.push_back(di);
    }
    if (!cur.empty()) pieces.push_back(std::move(cur));
    for (size_t i = 0; i < pieces.size(); ++i) {
      BasicBlock bb;
      bb.start_pc = pieces[i].front().pc;
      bb.insts = std::move(pieces[i]);
      if (i + 1 < pieces.size()) {
        bb.terminator = BranchInfo{};
        bb.successors = {bb.insts.back().pc + bb.insts.back().inst.raw_length};
      } else {
        bb.terminator = run.term;
        bb.successors = run.succ;
        if (run.tail_call) g.tail_call_targets.push_back(run.tail_target);
      }
      g.blocks.emplace(bb.start_pc, std::move(bb));
    }
  }

  std::sort(g.tail_call_targets.begin(), g.tail_call_targets.end());
  g.tail_call_targets.erase(
      std::unique(g.tail_call_targets.begin(), g.tail_call_targets.end()),
      g.tail_call_targets.end());
  return res;
}

}  // namespace xjp
