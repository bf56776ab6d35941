#pragma once

#include <string>
#include <vector>

#include "xjp/harness.hpp"

// Exception-handling scenarios: a prologue/metadata co-builder (code and
// unwind info are emitted together and cannot disagree), the 8 standard
// scenarios, and a runner covering the three protection configurations.

namespace xjp {

constexpr uint64_t kEhCodeBase = 0xDFF00000;  // direct calls reach the throw entries
constexpr uint64_t kObsBase = 0x10E00;        // observation cells in scratch

struct ScenFn {
  std::string name;
  uint64_t fid = 0;
  uint64_t addr = 0;
  std::vector<uint8_t> code;
  UnwindInfo info;
  LsData lsd;
  bool has_metadata = false;
};

// Builds one function and its metadata in lockstep.
class FnBuilder {
public:
  FnBuilder(std::string name, uint64_t fid, uint64_t addr) : a_{addr} {
    fn_.name = std::move(name);
    fn_.fid = fid;
    fn_.addr = addr;
    fn_.info.range = {addr, addr, fid};
    mark();
  }

  uint64_t pc() const { return a_.pc(); }

  void prologue(uint32_t alloc, bool push_rbx = false) {
    if (push_rbx) {
      inst(Op::PUSH, {Operand::make_reg(RBX)});
      pushed_rbx_ = true;
    }
    alloc_ = alloc;
    inst(Op::SUB, {Operand::make_reg(RSP), Operand::make_imm(alloc)});
    // reverse-application order: undo the alloc, then the push
    fn_.info.codes.push_back(UnwindCode::alloc(uint16_t(alloc)));
    if (push_rbx) fn_.info.codes.push_back(UnwindCode::push(RBX));
  }

  void epilogue_ret() {
    inst(Op::ADD, {Operand::make_reg(RSP), Operand::make_imm(alloc_)});
    if (pushed_rbx_) inst(Op::POP, {Operand::make_reg(RBX)});
    a_.bytes.push_back(0xC3);
  }

  void mov_ri(uint8_t r, uint64_t v) {
    inst(Op::MOV, {Operand::make_reg(r), Operand::make_imm(int64_t(v))});
  }
  // MOV [disp32], reg
  void store_abs(uint64_t addr, uint8_t reg) {
    MemForm m;
    m.disp = int32_t(addr);
    inst(Op::MOV, {Operand::make_mem(m), Operand::make_reg(reg)});
  }
  void store_imm(uint64_t addr, uint64_t v) {
    mov_ri(R10, v);
    store_abs(addr, R10);
  }

  void call(uint64_t target) {
    int64_t rel = int64_t(target) - int64_t(a_.pc() + 5);
    inst(Op::CALL, {Operand::make_imm(rel)});
  }

  void throw_(uint64_t type, uint64_t payload, uint64_t entry = 0xE0000000) {
    mov_ri(RCX, type);
    mov_ri(RDX, payload);
    call(entry);
  }
  void rethrow_(uint64_t entry = 0xE0000100) { call(entry); }

  // Constructs an object (lifecycle port store) and opens its state.
  void construct(uint64_t tag, uint64_t dtor_fid) {
    store_imm(0x20000, tag);
    new_state(dtor_fid);
  }
  // Normal-path destruction of the innermost object.
  void destruct(uint64_t tag) {
    store_imm(0x20008, tag);
    pop_state();
  }

  void try_begin() {
    try_low_.push_back(new_state(kNoDtor));
  }
  // Ends the guarded region; catch bodies are attached afterwards.
  void try_end() {
    TryBlock tb;
    tb.low = try_low_.back();
    tb.high = int16_t(fn_.lsd.state_count - 1);
    open_try_ = fn_.lsd.tries.size();
    fn_.lsd.tries.push_back(tb);
    try_low_.pop_back();
    pop_state();
  }
  // Places a catch target at the current pc, in its own state outside the
  // try interval so a rethrow escapes to the enclosing frame.
  void catch_begin(uint32_t type) {
    int16_t s = new_state(kNoDtor);
    fn_.lsd.tries[open_try_].catches.push_back({type, a_.pc(), s});
  }
  void catch_end() { pop_state(); }

  ScenFn finalize() {
    fn_.info.range.end_pc = a_.pc();
    fn_.info.lshandler = kGenericHandler;
    fn_.info.has_lsd = fn_.lsd.state_count > 0;
    // collapse the state marks into ip ranges
    for (size_t i = 0; i < marks_.size(); ++i) {
      uint64_t end = i + 1 < marks_.size() ? marks_[i + 1].first
                                           : fn_.info.range.end_pc;
      if (marks_[i].second != kNoState && end > marks_[i].first)
        fn_.lsd.ip2state.push_back({marks_[i].first, end, marks_[i].second});
    }
    fn_.code = std::move(a_.bytes);
    fn_.has_metadata = true;
    return std::move(fn_);
  }

private:
  detail::MiniAsm a_;
  ScenFn fn_;
  uint32_t alloc_ = 0;
  bool pushed_rbx_ = false;
  int16_t cur_ = kNoState;
  std::vector<std::pair<uint64_t, int16_t>> marks_;
  std::vector<int16_t> try_low_;
  size_t open_try_ = 0;

  void inst(Op op, std::vector<Operand> ops) {
    Instruction i;
    i.opcode = op;
    i.width = 64;
    i.operands = std::move(ops);
    a_.inst(i);
  }
  void mark() { marks_.push_back({a_.pc(), cur_}); }
  int16_t new_state(uint64_t dtor) {
    int16_t s = fn_.lsd.state_count++;
    fn_.lsd.unwind_map.push_back({cur_, dtor});
    cur_ = s;
    mark();
    return s;
  }
  // Pops take effect one byte past the current pc: a call's return address
  // must still map to the state that was live during the call.
  void pop_state() {
    cur_ = fn_.lsd.unwind_map[cur_].parent;
    marks_.push_back({a_.pc() + 1, cur_});
  }
};

// Destructor thunk: reports its tag, optionally runs sub-destructors.
inline ScenFn make_dtor_thunk(std::string name, uint64_t fid, uint64_t addr,
                              uint64_t tag, std::vector<uint64_t> calls = {}) {
  FnBuilder b(std::move(name), fid, addr);
  b.store_imm(0x20008, tag);
  for (uint64_t t : calls) b.call(t);
  // bare RET body: no prologue, no states
  ScenFn fn = b.finalize();
  fn.code.push_back(0xC3);
  fn.info.range.end_pc = fn.addr + fn.code.size();
  fn.info.has_lsd = false;
  fn.lsd = LsData{};
  return fn;
}

struct EhScenario {
  std::string name;
  std::vector<ScenFn> fns;
  TypeTable types;
  uint64_t entry = 0;
  std::vector<std::pair<bool, uint64_t>> expect_lifecycle;
  std::vector<uint64_t> expect_dtor_runs;   // DestructorRun order (thunk fids)
  std::vector<uint64_t> expect_frames;      // frames examined per raise
  std::vector<std::pair<uint64_t, uint64_t>> expect_mem;
};

// Standard type table: 1 = base, 2 derives from 1, 3 unrelated.
inline TypeTable scenario_types() {
  TypeTable t;
  t.parent[1] = 0;
  t.parent[2] = 1;
  t.parent[3] = 0;
  return t;
}

namespace detail {

// Layout helper: function slots every 0x200 bytes, thunks from +0x10000.
inline uint64_t fn_addr(int slot) { return kEhCodeBase + 0x200 * uint64_t(slot); }
inline uint64_t thunk_addr(int slot) {
  return kEhCodeBase + 0x10000 + 0x100 * uint64_t(slot);
}

// Two-frame catch scenario shared by S1/S2: child constructs one object and
// throws; main catches `catch_type` and records identity.
inline EhScenario two_frame_catch(std::string name, uint64_t throw_type,
                                  uint32_t catch_type) {
  EhScenario sc;
  sc.name = std::move(name);
  sc.types = scenario_types();
  uint64_t mainA = fn_addr(0), childA = fn_addr(1), dA = thunk_addr(0);

  FnBuilder child("child", 2, childA);
  child.prologue(0x30);
  child.construct(0x22, 100);
  child.throw_(throw_type, 0xBEEF);
  child.destruct(0x22);
  child.epilogue_ret();

  FnBuilder main_("main", 1, mainA);
  main_.prologue(0x28);
  main_.try_begin();
  main_.call(childA);
  main_.try_end();
  main_.epilogue_ret();
  main_.catch_begin(catch_type);
  main_.store_abs(kObsBase, RAX);
  main_.store_abs(kObsBase + 8, RDX);
  main_.catch_end();
  main_.epilogue_ret();

  sc.fns = {main_.finalize(), child.finalize(),
            make_dtor_thunk("~child_obj", 100, dA, 0x22)};
  sc.entry = mainA;
  sc.expect_lifecycle = {{true, 0x22}, {false, 0x22}};
  sc.expect_dtor_runs = {100};
  sc.expect_frames = {2};
  sc.expect_mem = {{kObsBase, 1}, {kObsBase + 8, 0xBEEF}};
  return sc;
}

}  // namespace detail

inline std::vector<EhScenario> build_eh_scenarios() {
  using detail::fn_addr;
  using detail::thunk_addr;
  std::vector<EhScenario> out;

  // S1: exact-type catch
  out.push_back(detail::two_frame_catch("exact-type catch", 1, 1));

  // S2: ancestor-type catch (throw derived, catch base)
  out.push_back(detail::two_frame_catch("ancestor-type catch", 2, 1));

  // S3: rethrow, identity preserved across two raises
  {
    EhScenario sc;
    sc.name = "rethrow identity";
    sc.types = scenario_types();
    uint64_t mainA = fn_addr(0), midA = fn_addr(1), childA = fn_addr(2);

    FnBuilder child("child", 3, childA);
    child.prologue(0x20);
    child.throw_(1, 0x1111);
    child.epilogue_ret();

    FnBuilder mid("mid", 2, midA);
    mid.prologue(0x30);
    mid.try_begin();
    mid.call(childA);
    mid.try_end();
    mid.epilogue_ret();
    mid.catch_begin(1);
    mid.store_abs(kObsBase, RAX);  // inner identity
    mid.rethrow_();
    mid.catch_end();
    mid.epilogue_ret();

    FnBuilder main_("main", 1, mainA);
    main_.prologue(0x28);
    main_.try_begin();
    main_.call(midA);
    main_.try_end();
    main_.epilogue_ret();
    main_.catch_begin(1);
    main_.store_abs(kObsBase + 8, RAX);  // outer identity
    main_.catch_end();
    main_.epilogue_ret();

    sc.fns = {main_.finalize(), mid.finalize(), child.finalize()};
    sc.entry = mainA;
    sc.expect_frames = {2, 2};
    sc.expect_mem = {{kObsBase, 1}, {kObsBase + 8, 1}};  // same object id
    out.push_back(std::move(sc));
  }

  // S4: cross-frame unwinding, depth 4, destructors along the way
  {
    EhScenario sc;
    sc.name = "cross-frame depth 4";
    sc.types = scenario_types();
    uint64_t a0 = fn_addr(0), a1 = fn_addr(1), a2 = fn_addr(2), a3 = fn_addr(3);
    uint64_t d2 = thunk_addr(0), d3 = thunk_addr(1);

    FnBuilder f3("f3", 4, a3);
    f3.prologue(0x20);
    f3.throw_(1, 0x44);
    f3.epilogue_ret();

    FnBuilder f2("f2", 3, a2);
    f2.prologue(0x30, true);
    f2.construct(0x33, 101);
    f2.call(a3);
    f2.destruct(0x33);
    f2.epilogue_ret();

    FnBuilder f1("f1", 2, a1);
    f1.prologue(0x40);
    f1.construct(0x32, 100);
    f1.call(a2);
    f1.destruct(0x32);
    f1.epilogue_ret();

    FnBuilder f0("main", 1, a0);
    f0.prologue(0x28);
    f0.try_begin();
    f0.call(a1);
    f0.try_end();
    f0.epilogue_ret();
    f0.catch_begin(1);
    f0.store_abs(kObsBase, RAX);
    f0.store_abs(kObsBase + 8, RDX);
    f0.catch_end();
    f0.epilogue_ret();

    sc.fns = {f0.finalize(), f1.finalize(), f2.finalize(), f3.finalize(),
              make_dtor_thunk("~o32", 100, d2, 0x32),
              make_dtor_thunk("~o33", 101, d3, 0x33)};
    sc.entry = a0;
    sc.expect_lifecycle = {{true, 0x32}, {true, 0x33},
                           {false, 0x33}, {false, 0x32}};
    sc.expect_dtor_runs = {101, 100};
    sc.expect_frames = {4};
    sc.expect_mem = {{kObsBase, 1}, {kObsBase + 8, 0x44}};
    out.push_back(std::move(sc));
  }

  // S5: nested helper without local-section data on the middle frame
  {
    EhScenario sc;
    sc.name = "nested helper";
    sc.types = scenario_types();
    uint64_t mainA = fn_addr(0), workA = fn_addr(1), helpA = fn_addr(2);

    FnBuilder help("helper", 3, helpA);
    help.prologue(0x20);
    help.throw_(3, 0x55);
    help.epilogue_ret();

    // worker has unwind codes but no LSData: pure global unwind
    FnBuilder work("worker", 2, workA);
    work.prologue(0x60, true);
    work.call(helpA);
    work.epilogue_ret();

    FnBuilder main_("main", 1, mainA);
    main_.prologue(0x28);
    main_.try_begin();
    main_.call(workA);
    main_.try_end();
    main_.epilogue_ret();
    main_.catch_begin(3);
    main_.store_abs(kObsBase, RAX);
    main_.store_abs(kObsBase + 8, RDX);
    main_.catch_end();
    main_.epilogue_ret();

    sc.fns = {main_.finalize(), work.finalize(), help.finalize()};
    sc.entry = mainA;
    sc.expect_frames = {3};
    sc.expect_mem = {{kObsBase, 1}, {kObsBase + 8, 0x55}};
    out.push_back(std::move(sc));
  }

  // S6: destructor ordering, three objects destroyed in reverse
  {
    EhScenario sc;
    sc.name = "destructor ordering";
    sc.types = scenario_types();
    uint64_t mainA = fn_addr(0), childA = fn_addr(1);
    uint64_t da = thunk_addr(0), db = thunk_addr(1), dc = thunk_addr(2);

    FnBuilder child("child", 2, childA);
    child.prologue(0x40);
    child.construct(0xA1, 100);
    child.construct(0xB2, 101);
    child.construct(0xC3, 102);
    child.throw_(1, 0x66);
    child.destruct(0xC3);
    child.destruct(0xB2);
    child.destruct(0xA1);
    child.epilogue_ret();

    FnBuilder main_("main", 1, mainA);
    main_.prologue(0x28);
    main_.try_begin();
    main_.call(childA);
    main_.try_end();
    main_.epilogue_ret();
    main_.catch_begin(1);
    main_.store_abs(kObsBase, RAX);
    main_.catch_end();
    main_.epilogue_ret();

    sc.fns = {main_.finalize(), child.finalize(),
              make_dtor_thunk("~a", 100, da, 0xA1),
              make_dtor_thunk("~b", 101, db, 0xB2),
              make_dtor_thunk("~c", 102, dc, 0xC3)};
    sc.entry = mainA;
    sc.expect_lifecycle = {{true, 0xA1}, {true, 0xB2}, {true, 0xC3},
                           {false, 0xC3}, {false, 0xB2}, {false, 0xA1}};
    sc.expect_dtor_runs = {102, 101, 100};
    sc.expect_frames = {2};
    sc.expect_mem = {{kObsBase, 1}};
    out.push_back(std::move(sc));
  }

  // S7: owning object; its destructor releases the tracked resource
  {
    EhScenario sc;
    sc.name = "owning object";
    sc.types = scenario_types();
    uint64_t mainA = fn_addr(0), childA = fn_addr(1);
    uint64_t dOwner = thunk_addr(0), dRes = thunk_addr(1);

    FnBuilder child("child", 2, childA);
    child.prologue(0x30);
    // resource 0x52 is owned: no state of its own, released by the owner
    child.store_imm(0x20000, 0x52);
    child.construct(0x4F, 100);
    child.throw_(1, 0x77);
    child.destruct(0x4F);
    child.epilogue_ret();

    FnBuilder main_("main", 1, mainA);
    main_.prologue(0x28);
    main_.try_begin();
    main_.call(childA);
    main_.try_end();
    main_.epilogue_ret();
    main_.catch_begin(1);
    main_.store_abs(kObsBase, RAX);
    main_.catch_end();
    main_.epilogue_ret();

    sc.fns = {main_.finalize(), child.finalize(),
              make_dtor_thunk("~owner", 100, dOwner, 0x4F, {dRes}),
              make_dtor_thunk("~resource", 101, dRes, 0x52)};
    sc.entry = mainA;
    sc.expect_lifecycle = {{true, 0x52}, {true, 0x4F},
                           {false, 0x4F}, {false, 0x52}};
    sc.expect_dtor_runs = {100};
    sc.expect_frames = {2};
    sc.expect_mem = {{kObsBase, 1}};
    out.push_back(std::move(sc));
  }

  // S8: composite object; destructor runs the member destructors
  {
    EhScenario sc;
    sc.name = "composite object";
    sc.types = scenario_types();
    uint64_t mainA = fn_addr(0), childA = fn_addr(1);
    uint64_t dBox = thunk_addr(0), dM1 = thunk_addr(1), dM2 = thunk_addr(2);

    FnBuilder child("child", 2, childA);
    child.prologue(0x30);
    child.store_imm(0x20000, 0xE1);  // member 1
    child.store_imm(0x20000, 0xE2);  // member 2
    child.construct(0xB0, 100);      // the composite
    child.throw_(1, 0x88);
    child.destruct(0xB0);
    child.epilogue_ret();

    FnBuilder main_("main", 1, mainA);
    main_.prologue(0x28);
    main_.try_begin();
    main_.call(childA);
    main_.try_end();
    main_.epilogue_ret();
    main_.catch_begin(1);
    main_.store_abs(kObsBase, RAX);
    main_.catch_end();
    main_.epilogue_ret();

    sc.fns = {main_.finalize(), child.finalize(),
              make_dtor_thunk("~box", 100, dBox, 0xB0, {dM2, dM1}),
              make_dtor_thunk("~m1", 101, dM1, 0xE1),
              make_dtor_thunk("~m2", 102, dM2, 0xE2)};
    sc.entry = mainA;
    sc.expect_lifecycle = {{true, 0xE1}, {true, 0xE2}, {true, 0xB0},
                           {false, 0xB0}, {false, 0xE2}, {false, 0xE1}};
    sc.expect_dtor_runs = {100};
    sc.expect_frames = {2};
    sc.expect_mem = {{kObsBase, 1}};
    out.push_back(std::move(sc));
  }

  return out;
}

// Call chain of `depth` frames below the catching frame: f0 catches, the
// deepest frame throws. depth 0 throws inside the catching frame itself.
inline EhScenario make_chain_scenario(int depth) {
  using detail::fn_addr;
  EhScenario sc;
  sc.name = "chain depth " + std::to_string(depth);
  sc.types = scenario_types();

  FnBuilder f0("main", 1, fn_addr(0));
  f0.prologue(0x28);
  f0.try_begin();
  if (depth == 0)
    f0.throw_(1, 0x99);
  else
    f0.call(fn_addr(1));
  f0.try_end();
  f0.epilogue_ret();
  f0.catch_begin(1);
  f0.store_abs(kObsBase, RAX);
  f0.catch_end();
  f0.epilogue_ret();
  sc.fns.push_back(f0.finalize());

  for (int i = 1; i <= depth; ++i) {
    FnBuilder fi("f" + std::to_string(i), uint64_t(i + 1), fn_addr(i));
    fi.prologue(0x20 + 8 * uint32_t(i % 4));
    if (i == depth)
      fi.throw_(1, 0x99);
    else
      fi.call(fn_addr(i + 1));
    fi.epilogue_ret();
    sc.fns.push_back(fi.finalize());
  }
  sc.entry = fn_addr(0);
  sc.expect_frames = {uint64_t(depth) + 1};
  sc.expect_mem = {{kObsBase, 1}};
  return sc;
}

// ---------------------------------------------------------------------------
// Runner

enum class EhConfig : uint8_t { Unprotected, Base, Shadow };

inline const char* eh_config_name(EhConfig c) {
  switch (c) {
    case EhConfig::Unprotected: return "unprotected";
    case EhConfig::Base: return "base";
    case EhConfig::Shadow: return "shadow";
  }
  return "?";
}

struct ScenarioResult {
  bool pass = true;
  std::string detail;
  MachineState final_state;
  RunStats stats;
  std::vector<LifecycleEvent> lifecycle;
  size_t decrypts = 0, sanitizes = 0;
  std::vector<uint64_t> frames_per_raise;
};

inline ScenarioResult run_scenario(const EhScenario& sc, EhConfig cfg,
                                   uint64_t seed, int shadow_len = 5) {
  ScenarioResult res;
  auto fail = [&](const std::string& d) {
    res.pass = false;
    if (res.detail.empty()) res.detail = d;
  };

  MachineEnv env;
  env.map_region(kScratchBase, kScratchEnd - kScratchBase);
  env.map_region(kStackBase, kStackEnd - kStackBase);
  for (const ScenFn& f : sc.fns) env.load_image(f.fid, f.addr, f.code);

  MetadataRegistry reg;
  reg.types = sc.types;

  ProtectedModule mod;
  bool use_mod = cfg != EhConfig::Unprotected;
  if (!use_mod) {
    for (const ScenFn& f : sc.fns)
      if (f.has_metadata) reg.add_plain(f.info, f.lsd);
  } else {
    std::vector<VmirFunction> vmir;
    const RuleTable& rules = RuleTable::defaults();
    for (const ScenFn& f : sc.fns) {
      FunctionRange fr{f.addr, f.addr + f.code.size(), f.fid};
      CfgResult cr = recover_function(env, fr);
      if (!cr.ok()) {
        fail("cfg error " + std::to_string(int(cr.err)) + " in " + f.name);
        return res;
      }
      auto xr = translate_function(cr.cfg, rules, env);
      if (!xr.ok()) {
        fail("translate error in " + f.name);
        return res;
      }
      vmir.push_back(std::move(xr.fn));
    }
    HandlerTable ht = select_handlers(vmir);
    std::vector<AssembleInput> inputs;
    for (size_t i = 0; i < vmir.size(); ++i)
      inputs.push_back({&vmir[i], sc.fns[i].addr});
    uint8_t key[16];
    Rng krng(sub_seed(seed, "key"));
    for (auto& b : key) b = uint8_t(krng.next());

    if (cfg == EhConfig::Base) {
      std::vector<EehpEntry> ees;
      for (const ScenFn& f : sc.fns)
        if (f.has_metadata)
          ees.push_back({f.fid, codec_metadata(f.info, f.lsd)});
      auto ar = assemble_module(inputs, ht, {}, serialize_eehp(ees), key,
                                sub_seed(seed, "module"), false);
      if (!ar.ok()) {
        fail(std::string("assemble error ") + mod_err_name(ar.err));
        return res;
      }
      mod = std::move(ar.mod);
      if (!reg.load_base_module(mod)) {
        fail("base metadata load failed");
        return res;
      }
    } else {
      // nonces are derived from the module seed; derive them the same way
      Rng nrng(sub_seed(sub_seed(seed, "module"), "assemble"));
      nrng.next();
      uint64_t eh_nonce = nrng.next();
      std::vector<ShadowRecord> srs;
      std::vector<EehpEntry> ees;
      for (const ScenFn& f : sc.fns) {
        if (!f.has_metadata) continue;
        auto [sr, ee] = protect_metadata(f.info, f.lsd, key, eh_nonce,
                                         sub_seed(seed, "shadow"), shadow_len);
        srs.push_back(std::move(sr));
        ees.push_back(std::move(ee));
      }
      auto ar = assemble_module(inputs, ht, serialize_suwd(srs),
                                serialize_eehp(ees), key,
                                sub_seed(seed, "module"), true);
      if (!ar.ok()) {
        fail(std::string("assemble error ") + mod_err_name(ar.err));
        return res;
      }
      mod = std::move(ar.mod);
      if (mod.eh_nonce != eh_nonce) {
        fail("eh nonce derivation mismatch");
        return res;
      }
      if (!reg.load_shadow_module(mod)) {
        fail("shadow metadata load failed");
        return res;
      }
    }
  }

  MachineState s0;
  s0.gpr[RSP] = kInitialRsp;
  RunOutcome o = run_process(env, use_mod ? &mod : nullptr, &reg, sc.entry, s0);
  res.final_state = o.final_state;
  res.stats = o.stats;
  res.lifecycle = env.lifecycle;

  if (o.kind != RunOutcome::Kind::NormalReturn)
    fail("outcome " + std::to_string(int(o.kind)) + " err " +
         std::to_string(int(o.err.kind)) + " at " + hex_u64(o.err.addr));

  if (env.lifecycle_counter() != 0)
    fail("lifecycle counter " + std::to_string(env.lifecycle_counter()));
  if (!sc.expect_lifecycle.empty()) {
    bool ok = env.lifecycle.size() == sc.expect_lifecycle.size();
    for (size_t i = 0; ok && i < env.lifecycle.size(); ++i)
      ok = env.lifecycle[i].construct == sc.expect_lifecycle[i].first &&
           env.lifecycle[i].tag == sc.expect_lifecycle[i].second;
    if (!ok) fail("lifecycle sequence mismatch");
  }

  std::vector<uint64_t> dtors;
  uint64_t cur_frames = 0;
  bool in_raise = false;
  for (const AuditEvent& a : env.audit) {
    switch (a.kind) {
      case AuditKind::DestructorRun:
        dtors.push_back(a.a);
        break;
      case AuditKind::Throw:
        if (in_raise) res.frames_per_raise.push_back(cur_frames);
        in_raise = true;
        cur_frames = 0;
        break;
      case AuditKind::FrameDispatched:
        ++cur_frames;
        break;
      case AuditKind::Decrypt:
        ++res.decrypts;
        break;
      case AuditKind::Sanitize:
        ++res.sanitizes;
        break;
      default:
        break;
    }
  }
  if (in_raise) res.frames_per_raise.push_back(cur_frames);

  if (!sc.expect_dtor_runs.empty() && dtors != sc.expect_dtor_runs)
    fail("destructor order mismatch");
  if (!sc.expect_frames.empty() && res.frames_per_raise != sc.expect_frames)
    fail("frames-per-raise mismatch");
  for (auto [addr, want] : sc.expect_mem) {
    uint64_t got = 0;
    env.read(addr, 8, got);
    if (got != want)
      fail("observation " + hex_u64(addr) + " = " + hex_u64(got) +
           ", expected " + hex_u64(want));
  }
  if (res.sanitizes != res.decrypts)
    fail("sanitize/decrypt count mismatch");
  return res;
}

}  // namespace xjp
