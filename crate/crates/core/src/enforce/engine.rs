//! The replay engine: a single-owner state machine that walks a trace under
//! an enforcement plan and emits one verdict per checked event.
//!
//! Phase semantics: events before time 0 (and every event of a Phase -1
//! run) are record-only, feeding allocation history without enforcement.
//! Phase 0 enforces everything and auditions frees of untracked objects
//! with the loaded model; the machine moves to Phase 1 the moment the
//! untracked population reaches zero, after which audition stays off.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::store::{CacheHandle, MapStore, ObjectRecord, SlotState, StackRegion, Subject};
use super::verdict::{Decision, Verdict, ViolationReason};
use crate::analyzer::{CheckKind, EnforcementPlan};
use crate::dtree::{extract_features, EvalBudget, FlatTree, Granularity, TreeError};
use crate::model::{
    AllocatorKind, CompartmentSpec, EventKind, RegionClass, TraceEvent,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    /// Preparation: record-only, feeds the profiler.
    MinusOne,
    /// Transition: enforcement plus audition of untracked frees.
    Zero,
    /// Full compartmentalization: enforcement only.
    One,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::MinusOne => "-1",
            Phase::Zero => "0",
            Phase::One => "1",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "-1" => Ok(Phase::MinusOne),
            "0" => Ok(Phase::Zero),
            "1" => Ok(Phase::One),
            other => Err(format!("unknown phase `{other}` (expected -1, 0, or 1)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub start_phase: Phase,
    /// Compartmentalization activation tick; earlier events are history.
    pub t0: u64,
    pub budget: EvalBudget,
    /// Private stacks are carved from this base in `stack_size` steps.
    pub private_stack_base: u64,
    pub stack_size: u64,
    /// Optional forced Phase 0 -> 1 transition tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_tick: Option<u64>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            start_phase: Phase::Zero,
            t0: 100,
            budget: EvalBudget::default(),
            private_stack_base: 0x10_0000_0000,
            stack_size: 0x4000,
            transition_tick: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("tick {tick}: audition required for untracked free but no model is loaded")]
    AuditionUnavailable { tick: u64 },
    #[error("model rejected: {0}")]
    ModelRejected(#[from] TreeError),
    #[error("store invariant broken at tick {tick}: {msg}")]
    StoreInvariant { tick: u64, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub verdicts: Vec<Verdict>,
    pub final_phase: Phase,
    /// Tick at which Phase 0 handed over to Phase 1, if it did.
    pub transition_tick: Option<u64>,
    pub allow_count: usize,
    pub deny_count: usize,
    pub audit_count: usize,
    pub warn_count: usize,
}

impl ReplayOutcome {
    pub fn denies(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| v.decision == Decision::Deny)
    }
}

/// One replay = one engine instance.
pub struct Engine<'a> {
    plan: &'a EnforcementPlan,
    spec: &'a CompartmentSpec,
    config: ReplayConfig,
    store: MapStore,
    phase: Phase,
    /// Active compartment subjects, innermost last.
    subject_stack: Vec<u64>,
    untracked_live: BTreeSet<u64>,
    next_stack_base: u64,
    next_vmalloc_desc: u64,
    transition_tick: Option<u64>,
    verdicts: Vec<Verdict>,
    warn_count: usize,
}

impl<'a> Engine<'a> {
    pub fn new(
        plan: &'a EnforcementPlan,
        spec: &'a CompartmentSpec,
        model: Option<FlatTree>,
        config: ReplayConfig,
    ) -> Result<Self, EngineError> {
        let mut store = MapStore { cfi_targets: plan.cfi_targets.clone(), ..Default::default() };
        if let Some(m) = model {
            m.validate(&config.budget)?;
            if !m.meta.quantized {
                return Err(EngineError::ModelRejected(TreeError::NotQuantized));
            }
            store.model = Some(m);
        }
        let next_stack_base = config.private_stack_base;
        Ok(Engine {
            plan,
            spec,
            config,
            store,
            phase: Phase::MinusOne, // set properly in run()
            subject_stack: Vec::new(),
            untracked_live: BTreeSet::new(),
            next_stack_base,
            next_vmalloc_desc: 1,
            transition_tick: None,
            verdicts: Vec::new(),
            warn_count: 0,
        })
    }

    pub fn store(&self) -> &MapStore {
        &self.store
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn run(&mut self, trace: &[TraceEvent]) -> Result<ReplayOutcome, EngineError> {
        self.phase = self.config.start_phase;
        for ev in trace {
            let enforcing = self.phase != Phase::MinusOne && ev.tick >= self.config.t0;
            if enforcing {
                self.dispatch(ev)?;
            } else {
                self.record_only(ev);
            }
            self.maybe_transition(ev);
            #[cfg(debug_assertions)]
            self.store.verify_disjoint().map_err(|msg| EngineError::StoreInvariant { tick: ev.tick, msg })?;
        }
        let mut outcome = ReplayOutcome {
            final_phase: self.phase,
            transition_tick: self.transition_tick,
            allow_count: 0,
            deny_count: 0,
            audit_count: 0,
            warn_count: self.warn_count,
            verdicts: std::mem::take(&mut self.verdicts),
        };
        for v in &outcome.verdicts {
            match v.decision {
                Decision::Allow => outcome.allow_count += 1,
                Decision::Deny => outcome.deny_count += 1,
                Decision::Audit => outcome.audit_count += 1,
            }
        }
        Ok(outcome)
    }

    fn maybe_transition(&mut self, ev: &TraceEvent) {
        if self.phase != Phase::Zero || ev.tick < self.config.t0 {
            return;
        }
        let forced = self.config.transition_tick.map_or(false, |t| ev.tick >= t);
        if forced || self.untracked_live.is_empty() {
            self.phase = Phase::One;
            self.transition_tick = Some(ev.tick);
        }
    }

    /// Pre-enforcement history: allocations land untracked, frees retire
    /// records, nothing is checked.
    fn record_only(&mut self, ev: &TraceEvent) {
        match ev.kind {
            EventKind::Alloc => {
                let addr = ev.addr.unwrap();
                let rec = ObjectRecord {
                    addr,
                    size: ev.size.unwrap(),
                    type_id: ev.type_id.unwrap(),
                    cache: None,
                    slot_size: None,
                    allocator: ev.allocator.unwrap(),
                    owner: self.owner_of_site(ev.site),
                    tracked: false,
                    freed: false,
                    free_tick: None,
                };
                match rec.allocator {
                    AllocatorKind::Buddy => {
                        self.store.buddy_sites.insert(addr, ev.site.unwrap_or(0));
                    }
                    AllocatorKind::Vmalloc => {
                        self.store.vmalloc_descs.insert(addr, self.next_vmalloc_desc);
                        self.next_vmalloc_desc += 1;
                    }
                    AllocatorKind::Slab => {}
                }
                self.store.object_owner.insert(addr, rec);
                if self.config.start_phase != Phase::MinusOne {
                    self.untracked_live.insert(addr);
                }
            }
            EventKind::Free => {
                let addr = ev.addr.unwrap();
                self.store.remove_object(addr);
                self.untracked_live.remove(&addr);
            }
            _ => {}
        }
    }

    fn owner_of_site(&self, site: Option<u64>) -> Subject {
        match site {
            Some(s) if self.spec.contains_code(s) => Subject::Compartment,
            _ => Subject::Kernel,
        }
    }

    fn emit(&mut self, verdict: Verdict) {
        self.verdicts.push(verdict);
    }

    fn allow_with_warning(&mut self, tick: u64, site: u64, detail: String) {
        self.warn_count += 1;
        self.emit(Verdict::allow(tick, site, detail));
    }

    fn dispatch(&mut self, ev: &TraceEvent) -> Result<(), EngineError> {
        match ev.kind {
            EventKind::Alloc => self.on_alloc(ev),
            EventKind::Free => self.on_free(ev)?,
            EventKind::Read | EventKind::Write => self.on_memory_access(ev),
            EventKind::IndirectCall | EventKind::IndirectJump | EventKind::Return => {
                self.on_indirect_transfer(ev)
            }
            EventKind::DirectCall => {}
            EventKind::EnterCompartment | EventKind::ExitCompartment => self.on_subject_switch(ev),
            EventKind::ArgPass | EventKind::ReturnValue => self.check_interface(ev),
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Control-flow integrity
    // ------------------------------------------------------------------

    /// Runtime target must be in the site's stored target set. A probed site
    /// missing from the map fails closed.
    fn on_indirect_transfer(&mut self, ev: &TraceEvent) {
        let site = ev.site.unwrap();
        let Some(probe) = self.plan.probe(site) else { return };
        if probe.check != CheckKind::CfiCheck {
            return;
        }
        let value = ev.value.unwrap();
        let verdict = match self.store.cfi_targets.get(&site) {
            None => Verdict::deny(
                ev.tick,
                site,
                ViolationReason::UnknownSite,
                format!("no target set recorded for site {site:#x}"),
            ),
            Some(targets) if targets.contains(&value) => Verdict::allow(ev.tick, site, ""),
            Some(_) => Verdict::deny(
                ev.tick,
                site,
                ViolationReason::CfiViolation,
                format!("transfer to {value:#x} outside the legal target set"),
            ),
        };
        self.emit(verdict);
    }

    // ------------------------------------------------------------------
    // Subject switching and private stacks
    // ------------------------------------------------------------------

    /// First entry carves a private stack out of the buddy arena; later
    /// entries reuse the recorded region. Exit restores kernel context.
    fn on_subject_switch(&mut self, ev: &TraceEvent) {
        let site = ev.site.unwrap();
        match ev.kind {
            EventKind::EnterCompartment => {
                let subject = ev.value.unwrap_or(0);
                if !self.store.stacks.contains_key(&subject) {
                    let region =
                        StackRegion { base: self.next_stack_base, size: self.config.stack_size, owner: subject };
                    self.next_stack_base += self.config.stack_size;
                    self.store.stacks.insert(subject, region);
                }
                self.subject_stack.push(subject);
                self.emit(Verdict::allow(ev.tick, site, format!("enter subject {subject}")));
            }
            EventKind::ExitCompartment => {
                if self.subject_stack.pop().is_none() {
                    self.emit(Verdict::deny(
                        ev.tick,
                        site,
                        ViolationReason::ProtocolViolation,
                        "exit without matching enter",
                    ));
                } else {
                    self.emit(Verdict::allow(ev.tick, site, "exit to kernel"));
                }
            }
            _ => unreachable!(),
        }
    }

    // ------------------------------------------------------------------
    // Private heap
    // ------------------------------------------------------------------

    fn on_alloc(&mut self, ev: &TraceEvent) {
        let tick = ev.tick;
        let site = ev.site.unwrap();
        let addr = ev.addr.unwrap();
        let size = ev.size.unwrap();
        let type_id = ev.type_id.unwrap();
        let allocator = ev.allocator.unwrap();
        let compartment_site = self.spec.contains_code(site);

        if let Some(existing) = self.store.object_at_base(addr) {
            if !existing.freed {
                self.emit(Verdict::deny(
                    tick,
                    site,
                    ViolationReason::OverlapViolation,
                    format!("allocation at {addr:#x} overlaps a live object"),
                ));
                return;
            }
            // Retained private memory: reusable only for the same type.
            if existing.type_id != type_id {
                self.emit(Verdict::deny(
                    tick,
                    site,
                    ViolationReason::OverlapViolation,
                    format!(
                        "retained slot at {addr:#x} (type {}) cannot hold type {type_id}",
                        existing.type_id
                    ),
                ));
                return;
            }
            let cache_id = existing.cache;
            let rec = self.store.object_owner.get_mut(&addr).unwrap();
            rec.freed = false;
            rec.free_tick = None;
            rec.tracked = true;
            rec.size = size;
            if let Some(cid) = cache_id {
                if let Some(slot) = self.store.caches.get_mut(&cid).and_then(|c| c.slot_mut(addr)) {
                    slot.1 = SlotState::Live;
                }
            }
            self.emit(Verdict::allow(tick, site, format!("slot at {addr:#x} reused")));
            return;
        }

        if let Some(conflict) = self.store.span_conflict(addr, size) {
            self.emit(Verdict::deny(
                tick,
                site,
                ViolationReason::OverlapViolation,
                format!("allocation [{addr:#x}+{size}) overlaps region at {conflict:#x}"),
            ));
            return;
        }

        let untracked = ev.pre_t0;
        let private = !untracked
            && (compartment_site || self.spec.co_owned_types.contains(&type_id));
        let mut rec = ObjectRecord {
            addr,
            size,
            type_id,
            cache: None,
            slot_size: None,
            allocator,
            owner: if compartment_site { Subject::Compartment } else { Subject::Kernel },
            tracked: !untracked,
            freed: false,
            free_tick: None,
        };

        match allocator {
            AllocatorKind::Slab if private => {
                let co_owned = self.spec.co_owned_types.contains(&type_id);
                let slot_size = self
                    .store
                    .caches
                    .entry(type_id)
                    .or_insert_with(|| CacheHandle {
                        id: type_id,
                        slot_size: slab_slot_size(size),
                        co_owned,
                        slots: Vec::new(),
                    })
                    .slot_size;
                if size > slot_size {
                    self.emit(Verdict::deny(
                        tick,
                        site,
                        ViolationReason::BoundsViolation,
                        format!("allocation of {size} bytes exceeds {slot_size}-byte slots of cache {type_id}"),
                    ));
                    return;
                }
                self.store.caches.get_mut(&type_id).unwrap().slots.push((addr, SlotState::Live));
                rec.cache = Some(type_id);
                rec.slot_size = Some(slot_size);
            }
            AllocatorKind::Slab => {}
            AllocatorKind::Buddy => {
                self.store.buddy_sites.insert(addr, site);
            }
            AllocatorKind::Vmalloc => {
                self.store.vmalloc_descs.insert(addr, self.next_vmalloc_desc);
                self.next_vmalloc_desc += 1;
            }
        }
        self.store.object_owner.insert(addr, rec);
        if untracked {
            self.untracked_live.insert(addr);
        }
        self.emit(Verdict::allow(tick, site, ""));
    }

    fn on_free(&mut self, ev: &TraceEvent) -> Result<(), EngineError> {
        let tick = ev.tick;
        let site = ev.site.unwrap_or(0);
        let addr = ev.addr.unwrap();
        let compartment_free = ev.site.map(|s| self.spec.contains_code(s)).unwrap_or(false);

        if !compartment_free {
            // Kernel frees are trusted: private (cache-backed) memory is
            // retained, everything else recycles.
            if let Some(rec) = self.store.object_at_base(addr) {
                if rec.cache.is_some() {
                    let cid = rec.cache.unwrap();
                    let r = self.store.object_owner.get_mut(&addr).unwrap();
                    r.freed = true;
                    r.free_tick = Some(tick);
                    if let Some(slot) = self.store.caches.get_mut(&cid).and_then(|c| c.slot_mut(addr)) {
                        slot.1 = SlotState::Retained;
                    }
                } else {
                    let untracked = !rec.tracked;
                    self.store.remove_object(addr);
                    if untracked {
                        self.untracked_live.remove(&addr);
                    }
                }
            }
            return Ok(());
        }

        match self.store.object_at_base(addr).cloned() {
            Some(rec) if rec.freed => {
                self.emit(Verdict::deny(
                    tick,
                    site,
                    ViolationReason::DoubleFree,
                    format!("object at {addr:#x} already freed at tick {}", rec.free_tick.unwrap_or(0)),
                ));
            }
            Some(rec) if !rec.tracked => {
                // Untracked object: Phase 0 audits the content, Phase 1
                // would already have everything tracked.
                let verdict = if self.phase == Phase::Zero {
                    self.audition(ev, Some(&rec))?
                } else {
                    Verdict::allow(tick, site, "untracked free outside audition window")
                };
                self.store.remove_object(addr);
                self.untracked_live.remove(&addr);
                self.emit(verdict);
            }
            Some(rec)
                if rec.owner == Subject::Kernel && !self.spec.co_owned_types.contains(&rec.type_id) =>
            {
                self.emit(Verdict::deny(
                    tick,
                    site,
                    ViolationReason::InvalidFree,
                    format!("compartment frees kernel-owned object at {addr:#x}"),
                ));
            }
            Some(rec) => {
                let r = self.store.object_owner.get_mut(&addr).unwrap();
                r.freed = true;
                r.free_tick = Some(tick);
                if let Some(cid) = rec.cache {
                    if let Some(slot) = self.store.caches.get_mut(&cid).and_then(|c| c.slot_mut(addr)) {
                        slot.1 = SlotState::Retained;
                    }
                }
                self.emit(Verdict::allow(tick, site, "retained"));
            }
            None => {
                if self.store.resolve_object(addr).is_some() {
                    self.emit(Verdict::deny(
                        tick,
                        site,
                        ViolationReason::InvalidFree,
                        format!("{addr:#x} points inside an object, not at its base"),
                    ));
                } else if self.phase == Phase::Zero
                    && self.spec.region_of(addr) == Some(RegionClass::KernelHeap)
                    && ev.payload.is_some()
                {
                    // First sighting of a pre-t0 object at its free.
                    let verdict = self.audition(ev, None)?;
                    self.emit(verdict);
                } else {
                    self.emit(Verdict::deny(
                        tick,
                        site,
                        ViolationReason::InvalidFree,
                        format!("{addr:#x} is not a recorded object"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// ML audition of an untracked free: infer the type from the dumped
    /// content and compare against the free site's static expectation.
    fn audition(&mut self, ev: &TraceEvent, rec: Option<&ObjectRecord>) -> Result<Verdict, EngineError> {
        let tick = ev.tick;
        let site = ev.site.unwrap_or(0);
        let Some(model) = self.store.model.as_ref() else {
            return Err(EngineError::AuditionUnavailable { tick });
        };
        let Some(payload) = ev.payload.as_deref() else {
            self.warn_count += 1;
            return Ok(Verdict::allow(tick, site, "untracked free without content; audition skipped"));
        };

        let mut expected: Vec<u64> = match self.plan.probe(site).map(|p| &p.check) {
            Some(CheckKind::HeapDivert { expected }) if !expected.is_empty() => expected.clone(),
            _ => Vec::new(),
        };
        if expected.is_empty() {
            if let Some(r) = rec {
                expected.push(r.type_id);
            }
        }
        if expected.is_empty() {
            self.warn_count += 1;
            return Ok(Verdict::allow(tick, site, "no static expectation at free site; audition skipped"));
        }

        let words = extract_features(payload, model.meta.n_features);
        let inferred = model
            .predict(&words, &self.config.budget)
            .map_err(EngineError::ModelRejected)?;
        let matches = match model.meta.granularity {
            Granularity::Type => expected.iter().any(|t| *t as i64 == inferred),
            Granularity::Compartment => {
                let expected_flag = expected.iter().any(|t| self.spec.is_compartment_type(*t));
                (inferred != 0) == expected_flag
            }
        };
        if matches {
            Ok(Verdict::allow(tick, site, "audition: content matches expectation"))
        } else {
            Ok(Verdict::audit(
                tick,
                site,
                ViolationReason::TypeMismatch,
                format!("audition inferred class {inferred}, expected one of {expected:?}"),
            ))
        }
    }

    // ------------------------------------------------------------------
    // Data integrity
    // ------------------------------------------------------------------

    fn on_memory_access(&mut self, ev: &TraceEvent) {
        let site = ev.site.unwrap();
        let Some(probe) = self.plan.probe(site) else { return };
        let tick = ev.tick;
        let addr = ev.addr.unwrap();
        let size = ev.size.unwrap().max(1);

        if ev.kind == EventKind::Read {
            // Reads are permitted against every object class; the probe
            // only exists in unoptimized plans.
            self.emit(Verdict::allow(tick, site, "read"));
            return;
        }

        let verdict = match &probe.check {
            CheckKind::StackRangeCheck | CheckKind::StackSwitch => self.stack_check(tick, site, addr, size),
            CheckKind::GlobalAccessCheck => self.global_check(tick, site, addr, size),
            CheckKind::HeapTypeCheck { expected } => {
                self.heap_check(tick, site, addr, size, expected)
            }
            CheckKind::ShortcutCacheCheck { cache_ref } => {
                self.heap_check(tick, site, addr, size, &[*cache_ref])
            }
            CheckKind::ConsolidatedRangeCheck { min_off, max_off, anchor_off, expected } => {
                // Reconstruct the shared base from this access, then check
                // the extremal interval once.
                let base = addr.wrapping_sub(*anchor_off as u64);
                let lo = base.wrapping_add(*min_off as u64);
                let span = (*max_off - *min_off) as u64 + size;
                self.heap_check(tick, site, lo, span, expected)
            }
            CheckKind::CfiCheck | CheckKind::HeapDivert { .. } | CheckKind::ArgCheck | CheckKind::RetCheck => {
                // A write should never reach these probes; fail closed on
                // the generic heap path.
                self.heap_check(tick, site, addr, size, &[])
            }
        };
        self.emit(verdict);
    }

    fn stack_check(&mut self, tick: u64, site: u64, addr: u64, size: u64) -> Verdict {
        let Some(&subject) = self.subject_stack.last() else {
            return Verdict::deny(
                tick,
                site,
                ViolationReason::ProtocolViolation,
                "compartment stack access outside compartment context",
            );
        };
        let Some(region) = self.store.stacks.get(&subject).copied() else {
            return Verdict::deny(tick, site, ViolationReason::ProtocolViolation, "no private stack recorded");
        };
        if region.contains_span(addr, size) {
            return Verdict::allow(tick, site, "");
        }
        if region.intersects(addr, size) {
            return Verdict::deny(
                tick,
                site,
                ViolationReason::BoundsViolation,
                format!("write [{addr:#x}+{size}) crosses the private stack boundary"),
            );
        }
        self.foreign_target_verdict(tick, site, addr, "stack-expected write")
    }

    fn global_check(&mut self, tick: u64, site: u64, addr: u64, size: u64) -> Verdict {
        match self.spec.region_of(addr) {
            Some(RegionClass::CompartmentData) => {
                let region = self.spec.layout_region(RegionClass::CompartmentData).unwrap();
                if region.range().contains_span(addr, size) {
                    Verdict::allow(tick, site, "")
                } else {
                    Verdict::deny(
                        tick,
                        site,
                        ViolationReason::BoundsViolation,
                        "write crosses the compartment data boundary",
                    )
                }
            }
            _ => self.foreign_target_verdict(tick, site, addr, "global-expected write"),
        }
    }

    fn heap_check(&mut self, tick: u64, site: u64, addr: u64, size: u64, expected: &[u64]) -> Verdict {
        if let Some(rec) = self.store.resolve_object(addr).cloned() {
            if !rec.tracked {
                // Type and ownership are unknown until audition; bounds
                // still apply because the allocation size is on record.
                return if rec.contains_span(addr, size) {
                    Verdict::allow(tick, site, "untracked object; bounds only")
                } else {
                    Verdict::deny(
                        tick,
                        site,
                        ViolationReason::BoundsViolation,
                        format!("write [{addr:#x}+{size}) crosses untracked object bounds"),
                    )
                };
            }
            if rec.freed {
                return Verdict::deny(
                    tick,
                    site,
                    ViolationReason::UseAfterFree,
                    format!("write to retained slot at {:#x} freed at tick {}", rec.addr, rec.free_tick.unwrap_or(0)),
                );
            }
            if !rec.contains_span(addr, size) {
                return Verdict::deny(
                    tick,
                    site,
                    ViolationReason::BoundsViolation,
                    format!("write [{addr:#x}+{size}) crosses slot boundary of {:#x}", rec.addr),
                );
            }
            if !expected.is_empty() && !expected.contains(&rec.type_id) {
                return Verdict::deny(
                    tick,
                    site,
                    ViolationReason::TypeMismatch,
                    format!("object has type {}, site expects {expected:?}", rec.type_id),
                );
            }
            if rec.owner == Subject::Compartment || self.spec.co_owned_types.contains(&rec.type_id) {
                return Verdict::allow(tick, site, "");
            }
            return Verdict::deny(
                tick,
                site,
                ViolationReason::PolicyViolation,
                format!("write to kernel-owned object at {:#x}", rec.addr),
            );
        }
        if self.store.resolve_stack(addr).is_some() {
            return self.foreign_target_verdict(tick, site, addr, "heap-expected write");
        }
        self.foreign_target_verdict(tick, site, addr, "heap-expected write")
    }

    /// A checked write landed somewhere other than its analyzed region.
    /// Kernel-owned and code regions are policy denials; anything else is a
    /// wild address.
    fn foreign_target_verdict(&self, tick: u64, site: u64, addr: u64, what: &str) -> Verdict {
        if self.store.resolve_stack(addr).is_some() {
            return Verdict::deny(
                tick,
                site,
                ViolationReason::PolicyViolation,
                format!("{what} landed in a private stack region at {addr:#x}"),
            );
        }
        if self.store.resolve_object(addr).is_some() {
            return Verdict::deny(
                tick,
                site,
                ViolationReason::PolicyViolation,
                format!("{what} landed in a heap object at {addr:#x}"),
            );
        }
        match self.spec.region_of(addr) {
            Some(
                class @ (RegionClass::KernelCode
                | RegionClass::KernelData
                | RegionClass::KernelStack
                | RegionClass::EbpfPrograms
                | RegionClass::CompartmentCode
                | RegionClass::CompartmentData),
            ) => Verdict::deny(
                tick,
                site,
                ViolationReason::PolicyViolation,
                format!("{what} landed in {class:?} at {addr:#x}"),
            ),
            _ => Verdict::deny(
                tick,
                site,
                ViolationReason::WildAddress,
                format!("{what} landed at unmapped address {addr:#x}"),
            ),
        }
    }

    // ------------------------------------------------------------------
    // Interface authorization
    // ------------------------------------------------------------------

    /// Argument and return values crossing the boundary are checked against
    /// administrator-supplied contracts; a missing contract allows with a
    /// warning.
    fn check_interface(&mut self, ev: &TraceEvent) {
        let tick = ev.tick;
        let site = ev.site.unwrap();
        let value = ev.value.unwrap();
        let Some(callee) = self.plan.call_targets.get(&site) else {
            self.allow_with_warning(tick, site, format!("no callee resolved for site {site:#x}"));
            return;
        };
        let Some(contract) = self.spec.interface_contracts.get(callee) else {
            self.allow_with_warning(tick, site, format!("no contract for callee {callee}"));
            return;
        };
        let (predicate, reason) = match ev.kind {
            EventKind::ArgPass => (&contract.arg, ViolationReason::ConfusedDeputy),
            EventKind::ReturnValue => (&contract.ret, ViolationReason::IagoViolation),
            _ => unreachable!(),
        };
        match predicate {
            None => self.allow_with_warning(tick, site, format!("no predicate for {callee}")),
            Some(p) if p.holds(value) => self.emit(Verdict::allow(tick, site, "")),
            Some(_) => self.emit(Verdict::deny(
                tick,
                site,
                reason,
                format!("value {value:#x} ({}) violates the {callee} contract", value as i64),
            )),
        }
    }
}

/// Slab slot sizing: next power of two, at least 8 bytes.
fn slab_slot_size(size: u64) -> u64 {
    size.max(8).next_power_of_two()
}
