#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "xjp/eh.hpp"
#include "xjp/runtime.hpp"
#include "xjp/shadow.hpp"

// Process-level execution: the simulated OS exception dispatcher (global
// unwinding over ContextRecords, per-frame LSHandler invocation, the
// EHInterceptor for shadowed frames) and the run loop that alternates oracle
// and VM execution.

namespace xjp {

struct ExceptionObject {
  uint64_t object_id = 0;  // minted once at throw; rethrow keeps it
  uint64_t type_id = 0;
  uint64_t payload = 0;
};

struct DispatchOutcome {
  enum class Kind : uint8_t { HandledAt, ContinueUnwind, Unhandled, Error };
  Kind kind = Kind::ContinueUnwind;
  uint64_t resume_pc = 0;     // HandledAt
  uint64_t resume_rsp = 0;    // HandledAt: catching frame's body RSP
  int16_t catch_state = kNoState;
  uint64_t frames_processed = 0;
  Exec err;
  EhErr eh_err = EhErr::None;
};

// Default LSHandler address used for genuine (non-shadowed) metadata.
constexpr uint64_t kGenericHandler = 0xE0002000;

struct RegisteredFrame {
  UnwindInfo info;  // genuine metadata (plain registration)
  LsData lsd;
  bool shadowed = false;
  ShadowRecord shadow;  // shadowed registration: decoy codes + interceptor
};

struct MetadataRegistry {
  std::map<uint64_t, RegisteredFrame> frames;  // by function-id
  TypeTable types;

  void add_plain(const UnwindInfo& info, const LsData& lsd) {
    RegisteredFrame f;
    f.info = info;
    f.lsd = lsd;
    frames[info.range.function_id] = std::move(f);
  }
  void add_shadowed(const ShadowRecord& sr) {
    RegisteredFrame f;
    f.shadowed = true;
    f.shadow = sr;
    frames[sr.range.function_id] = std::move(f);
  }

  const RegisteredFrame* covering(uint64_t pc) const {
    for (auto& [id, f] : frames) {
      const FunctionRange& r = f.shadowed ? f.shadow.range : f.info.range;
      if (r.contains(pc)) return &f;
    }
    return nullptr;
  }

  // Base-protected module: EEHP entries hold plaintext metadata.
  bool load_base_module(const ProtectedModule& mod) {
    std::vector<EehpEntry> entries;
    if (!parse_eehp(mod.eehp, entries)) return false;
    for (const EehpEntry& e : entries) {
      UnwindInfo info;
      LsData lsd;
      if (parse_metadata(e.ciphertext, info, lsd) != EhErr::None) return false;
      add_plain(info, lsd);
    }
    return true;
  }

  // EH-shadow-protected module: SUWD shadow records; payloads stay encrypted.
  bool load_shadow_module(const ProtectedModule& mod) {
    std::vector<ShadowRecord> recs;
    if (!parse_suwd(mod.suwd, recs)) return false;
    for (const ShadowRecord& r : recs) add_shadowed(r);
    return true;
  }
};

struct RunStats {
  uint64_t steps = 0;
  uint64_t dispatches = 0;   // VM handler dispatches
  uint64_t fallbacks = 0;
  uint64_t raises = 0;
  uint64_t frames_processed = 0;
  uint64_t interceptor_calls = 0;
};

struct RunOutcome {
  enum class Kind : uint8_t {
    NormalReturn,
    TailRedirect,
    ExceptionRaised,  // unhandled
    Fault,
  };
  Kind kind = Kind::Fault;
  MachineState final_state;
  ExceptionObject exception;
  Exec err;
  RunStats stats;
};

class ProcessRunner {
public:
  ProcessRunner(MachineEnv& env, const ProtectedModule* mod,
                const MetadataRegistry* registry, uint64_t step_limit = 10'000'000)
      : env_(env), mod_(mod), registry_(registry), step_limit_(step_limit) {}

  RunOutcome run(uint64_t start, MachineState state) {
    // top-level frame returns to the halt sentinel
    state.gpr[RSP] -= 8;
    env_.write(state.gpr[RSP], 8, env_.halt_address);
    state.rip = start;
    RunOutcome out = loop(state);
    out.stats = stats_;
    return out;
  }

  const RunStats& stats() const { return stats_; }

private:
  MachineEnv& env_;
  const ProtectedModule* mod_;
  const MetadataRegistry* registry_;
  uint64_t step_limit_;
  RunStats stats_;

  struct VmResume {
    const FunctionMapEntry* fn;
    uint32_t cell;
  };

  std::optional<VmResume> vm_resume_point(uint64_t pc) const {
    if (!mod_) return std::nullopt;
    for (const FunctionMapEntry& f : mod_->functions) {
      if (!f.range.contains(pc) && f.entry_address != pc) continue;
      if (f.entry_address == pc) return VmResume{&f, f.entry_cell};
      for (auto& [lpc, cell] : f.label_cells)
        if (lpc == pc) return VmResume{&f, cell};
    }
    return std::nullopt;
  }

  RunOutcome done(RunOutcome::Kind k, const MachineState& s) {
    RunOutcome o;
    o.kind = k;
    o.final_state = s;
    o.err = Exec::good();
    return o;
  }

  RunOutcome fault(const MachineState& s, Exec e) {
    RunOutcome o;
    o.kind = RunOutcome::Kind::Fault;
    o.final_state = s;
    o.err = e;
    return o;
  }

  RunOutcome loop(MachineState state) {
    for (;;) {
      if (state.rip == env_.halt_address)
        return done(RunOutcome::Kind::NormalReturn, state);

      if (state.rip == env_.throw_entry || state.rip == env_.rethrow_entry) {
        bool re = state.rip == env_.rethrow_entry;
        uint64_t ret;
        if (Exec e = detail::pop64(state, env_, ret); !e.ok())
          return fault(state, e);
        state.rip = ret;
        ExceptionObject exc;
        if (re) {
          if (!env_.active_exception)
            return fault(state, Exec::fail(XKind::Internal, uint64_t(EhErr::NoActiveException)));
          exc = {env_.active_exception->object_id,
                 env_.active_exception->type_id,
                 env_.active_exception->payload};
        } else {
          exc = {env_.next_object_id++, state.gpr[RCX], state.gpr[RDX]};
        }
        DispatchOutcome d = raise_exception(exc, state);
        if (d.kind == DispatchOutcome::Kind::HandledAt) continue;
        if (d.kind == DispatchOutcome::Kind::Unhandled) {
          RunOutcome o = done(RunOutcome::Kind::ExceptionRaised, state);
          o.exception = exc;
          return o;
        }
        return fault(state, d.err.ok() ? Exec::fail(XKind::Internal) : d.err);
      }

      if (auto r = vm_resume_point(state.rip)) {
        RunOutcome o;
        if (run_vm(*r, state, o)) return o;
        continue;
      }

      if (++stats_.steps > step_limit_)
        return fault(state, Exec::fail(XKind::StepLimit));
      Exec e = oracle_step(state, env_);
      if (!e.ok()) {
        if (e.kind == XKind::Fault && !env_.mapped(e.addr) &&
            e.addr == state.rip && e.addr >= 0xE0000000)
          return done(RunOutcome::Kind::TailRedirect, state);
        return fault(state, e);
      }
    }
  }

  // Runs the VM until it exits back to native flow. Returns true when the
  // outcome `o` terminates the whole process run.
  bool run_vm(const VmResume& r, MachineState& state, RunOutcome& o) {
    VmContext ctx;
    vm_enter_at(ctx, state, *mod_, r.fn->function_id, r.cell);
    for (;;) {
      if (++stats_.steps > step_limit_) {
        o = fault(ctx.state, Exec::fail(XKind::StepLimit));
        return true;
      }
      StepStatus st = vm_step(ctx, *mod_, env_);
      if (!st.ok()) {
        o = fault(ctx.state, st.err);
        return true;
      }
      switch (st.kind) {
        case StepKind::Running:
          break;
        case StepKind::NeedsFallback: {
          Exec e = native_fallback(ctx, *mod_, st.native_bytes, env_);
          if (!e.ok()) {
            o = fault(ctx.state, e);
            return true;
          }
          break;
        }
        case StepKind::Threw: {
          stats_.dispatches += ctx.dispatch_count;
          stats_.fallbacks += ctx.fallback_count;
          state = ctx.state;  // rip = simulated return site (throw pc)
          ExceptionObject exc;
          if (st.throw_kind == uint64_t(kThrowRethrow)) {
            if (!env_.active_exception) {
              o = fault(state, Exec::fail(XKind::Internal,
                                          uint64_t(EhErr::NoActiveException)));
              return true;
            }
            exc = {env_.active_exception->object_id,
                   env_.active_exception->type_id,
                   env_.active_exception->payload};
          } else {
            exc = {env_.next_object_id++, state.gpr[RCX], state.gpr[RDX]};
          }
          DispatchOutcome d = raise_exception(exc, state);
          if (d.kind == DispatchOutcome::Kind::HandledAt) return false;
          if (d.kind == DispatchOutcome::Kind::Unhandled) {
            o = done(RunOutcome::Kind::ExceptionRaised, state);
            o.exception = exc;
            return true;
          }
          o = fault(state, d.err.ok() ? Exec::fail(XKind::Internal) : d.err);
          return true;
        }
        case StepKind::Exited: {
          stats_.dispatches += ctx.dispatch_count;
          stats_.fallbacks += ctx.fallback_count;
          vm_exit(ctx, state);
          return false;
        }
      }
    }
  }

  // ------------------------------------------------------------------
  // Exception dispatch

public:
  // Walks frames from state.rip; on HandledAt commits the record to `state`
  // (rip = catch target, RSP = catching frame's body RSP, RAX = object id,
  // RDX = payload) and records the active exception.
  DispatchOutcome raise_exception(const ExceptionObject& exc,
                                  MachineState& state) {
    DispatchOutcome out;
    if (!registry_) {
      out.kind = DispatchOutcome::Kind::Unhandled;
      return out;
    }
    ++stats_.raises;
    env_.audit.push_back({AuditKind::Throw, exc.object_id, exc.type_id});
    ContextRecord rec;
    rec.state = state;
    for (;;) {
      const RegisteredFrame* f = registry_->covering(rec.state.rip);
      if (!f) {
        out.kind = DispatchOutcome::Kind::Unhandled;
        stats_.frames_processed += out.frames_processed;
        return out;
      }
      ++out.frames_processed;
      rec.frame_base = rec.state.gpr[RSP];
      uint64_t fid = f->shadowed ? f->shadow.range.function_id
                                 : f->info.range.function_id;
      env_.audit.push_back({AuditKind::FrameDispatched, fid, rec.state.rip});

      DispatchOutcome d = dispatch_frame(rec, *f, exc);
      if (d.kind == DispatchOutcome::Kind::HandledAt) {
        state = rec.state;
        state.rip = d.resume_pc;
        state.gpr[RSP] = d.resume_rsp;
        state.gpr[RAX] = exc.object_id;
        state.gpr[RDX] = exc.payload;
        env_.active_exception = {exc.object_id, exc.type_id, exc.payload};
        env_.audit.push_back({AuditKind::CatchCommit, exc.object_id, d.resume_pc});
        out.kind = DispatchOutcome::Kind::HandledAt;
        out.resume_pc = d.resume_pc;
        out.resume_rsp = d.resume_rsp;
        out.catch_state = d.catch_state;
        stats_.frames_processed += out.frames_processed;
        return out;
      }
      if (d.kind != DispatchOutcome::Kind::ContinueUnwind) {
        out.kind = d.kind;
        out.err = d.err;
        out.eh_err = d.eh_err;
        stats_.frames_processed += out.frames_processed;
        return out;
      }
      // frame fully unwound by dispatch_frame; keep walking
    }
  }

  DispatchOutcome rethrow(MachineState& state) {
    DispatchOutcome out;
    if (!env_.active_exception) {
      out.kind = DispatchOutcome::Kind::Error;
      out.eh_err = EhErr::NoActiveException;
      return out;
    }
    ExceptionObject exc{env_.active_exception->object_id,
                        env_.active_exception->type_id,
                        env_.active_exception->payload};
    return raise_exception(exc, state);
  }

private:
  // Dispatches one frame; on ContinueUnwind the record has been advanced to
  // the caller's frame.
  DispatchOutcome dispatch_frame(ContextRecord& rec, const RegisteredFrame& f,
                                 const ExceptionObject& exc) {
    if (f.shadowed) return dispatch_shadowed(rec, f, exc);

    DispatchOutcome out;
    if (f.info.has_lsd) {
      DispatchOutcome h = run_local_handler(rec, f.info, f.lsd, exc, false);
      if (h.kind != DispatchOutcome::Kind::ContinueUnwind) return h;
    }
    Exec e = unwind_frame(rec, f.info, env_);
    if (!e.ok()) {
      out.kind = DispatchOutcome::Kind::Error;
      out.err = e;
      return out;
    }
    out.kind = DispatchOutcome::Kind::ContinueUnwind;
    return out;
  }

  // The OS applies the shadow codes outside the VM, then calls the
  // interceptor with the pre-shadow snapshot.
  DispatchOutcome dispatch_shadowed(ContextRecord& rec,
                                    const RegisteredFrame& f,
                                    const ExceptionObject& exc) {
    DispatchOutcome out;
    ContextRecord snapshot = rec;
    for (const UnwindCode& c : f.shadow.codes) {
      Exec e = apply_unwind_code(rec, c, env_);
      if (!e.ok()) {
        out.kind = DispatchOutcome::Kind::Error;
        out.err = e;
        return out;
      }
    }
    env_.audit.push_back(
        {AuditKind::ShadowApplied, f.shadow.range.function_id,
         uint64_t(f.shadow.codes.size())});
    return eh_interceptor(rec, snapshot, f.shadow, exc);
  }

  DispatchOutcome eh_interceptor(ContextRecord& rec,
                                 const ContextRecord& snapshot,
                                 const ShadowRecord& shadow,
                                 const ExceptionObject& exc) {
    DispatchOutcome out;
    ++stats_.interceptor_calls;

    // (1) rollback shadow effects
    rec.state.gpr[RSP] -= uint64_t(shadow.net_delta);
    for (uint8_t r : shadow.clobbered) rec.state.gpr[r] = snapshot.state.gpr[r];
    env_.audit.push_back(
        {AuditKind::Rollback, shadow.range.function_id, uint64_t(shadow.net_delta)});

    // (2) decrypt the genuine metadata
    if (!mod_) {
      out.kind = DispatchOutcome::Kind::Error;
      out.eh_err = EhErr::MalformedMetadata;
      return out;
    }
    std::vector<EehpEntry> entries;
    if (!parse_eehp(mod_->eehp, entries)) {
      out.kind = DispatchOutcome::Kind::Error;
      out.eh_err = EhErr::MalformedMetadata;
      return out;
    }
    const EehpEntry* entry = nullptr;
    for (const EehpEntry& e : entries)
      if (e.function_id == shadow.range.function_id) entry = &e;
    if (!entry) {
      out.kind = DispatchOutcome::Kind::Error;
      out.eh_err = EhErr::MalformedMetadata;
      return out;
    }
    std::vector<uint8_t> plain =
        crypt_stream(mod_->key, mod_->eh_nonce ^ shadow.range.function_id,
                     entry->ciphertext);
    env_.audit.push_back({AuditKind::Decrypt, shadow.range.function_id,
                          uint64_t(plain.size())});
    UnwindInfo info;
    LsData lsd;
    EhErr pe = parse_metadata(plain, info, lsd);
    if (pe != EhErr::None) {
      sanitize(plain, shadow.range.function_id);
      out.kind = DispatchOutcome::Kind::Error;
      out.eh_err = pe;  // tampering signal
      return out;
    }

    // (3) replay genuine unwinding
    DispatchOutcome h;
    if (info.has_lsd) {
      h = run_local_handler(rec, info, lsd, exc, true);
    } else {
      h.kind = DispatchOutcome::Kind::ContinueUnwind;
    }
    if (h.kind == DispatchOutcome::Kind::ContinueUnwind) {
      Exec e = unwind_frame(rec, info, env_);
      if (!e.ok()) {
        h.kind = DispatchOutcome::Kind::Error;
        h.err = e;
      }
    }
    // (5) sanitize
    sanitize(plain, shadow.range.function_id);
    return h;
  }

  void sanitize(std::vector<uint8_t>& plain, uint64_t fid) {
    std::fill(plain.begin(), plain.end(), 0);
    env_.audit.push_back({AuditKind::Sanitize, fid, 0});
  }

  // Generic local handler: FSM walk, destructor thunks through nested runs.
  DispatchOutcome run_local_handler(ContextRecord& rec, const UnwindInfo& info,
                                    const LsData& lsd,
                                    const ExceptionObject& exc,
                                    bool protected_frame) {
    DispatchOutcome out;
    int16_t from = state_for_pc(lsd, rec.state.rip);
    auto plan = plan_actions(lsd, from, uint32_t(exc.type_id), registry_->types);
    if (!plan) {
      out.kind = DispatchOutcome::Kind::Error;
      out.eh_err = EhErr::MalformedLsData;
      return out;
    }
    for (uint64_t dtor : plan->dtors) {
      Exec e = run_thunk(dtor, rec.state.gpr[RSP]);
      if (!e.ok()) {
        out.kind = DispatchOutcome::Kind::Error;
        out.err = e;
        return out;
      }
      env_.audit.push_back({AuditKind::DestructorRun, dtor, 0});
    }
    if (plan->catch_found) {
      out.kind = DispatchOutcome::Kind::HandledAt;
      out.resume_pc = plan->catch_target;
      out.resume_rsp = rec.state.gpr[RSP];
      out.catch_state = plan->catch_state;
      return out;
    }
    (void)protected_frame;
    out.kind = DispatchOutcome::Kind::ContinueUnwind;
    return out;
  }

  // Runs a destructor thunk to completion on a scratch slice of stack below
  // the frames being unwound.
  Exec run_thunk(uint64_t function_id, uint64_t rsp) {
    uint64_t entry = 0;
    if (mod_) {
      if (const FunctionMapEntry* f = mod_->find_function(function_id))
        entry = f->entry_address;
    }
    if (!entry) {
      for (const CodeImage& img : env_.images())
        if (img.function_id == function_id) entry = img.load_addr;
    }
    if (!entry) return Exec::fail(XKind::Internal, function_id);
    MachineState s;
    s.gpr[RSP] = (rsp - 0x1000) & ~7ull;
    RunOutcome o = run_nested(entry, s);
    if (o.kind != RunOutcome::Kind::NormalReturn)
      return o.err.ok() ? Exec::fail(XKind::Internal) : o.err;
    return Exec::good();
  }

  RunOutcome run_nested(uint64_t start, MachineState state) {
    state.gpr[RSP] -= 8;
    env_.write(state.gpr[RSP], 8, env_.halt_address);
    state.rip = start;
    return loop(state);
  }
};

inline RunOutcome run_process(MachineEnv& env, const ProtectedModule* mod,
                              const MetadataRegistry* registry, uint64_t start,
                              const MachineState& state,
                              uint64_t step_limit = 10'000'000) {
  ProcessRunner r(env, mod, registry, step_limit);
  return r.run(start, state);
}

}  // namespace xjp
