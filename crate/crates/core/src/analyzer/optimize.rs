//! Probe-reduction passes.
//!
//! Four passes run in a fixed order: deterministic-address skipping,
//! same-base consolidation (which also retires the dedicated return-address
//! probe), read elision, and the single-cache shortcut rewrite. The order is
//! part of the plan contract; identical inputs yield byte-identical plans.

use std::collections::BTreeSet;

use super::classify::{AccessKind, Category};
use super::plan::{CheckKind, EnforcementPlan, PassStats, ReductionStats};
use crate::model::{CompartmentSpec, Instruction, OperandKind};

pub const PASS_SKIP_DETERMINISTIC: &str = "skip_deterministic";
pub const PASS_CONSOLIDATE: &str = "consolidate";
pub const PASS_ESCHEW_READS: &str = "eschew_reads";
pub const PASS_SHORTCUT_HEAP: &str = "shortcut_heap";

/// Runs all four passes over an unoptimized plan.
pub fn optimize_plan(
    mut plan: EnforcementPlan,
    ir: &[Instruction],
    spec: &CompartmentSpec,
) -> EnforcementPlan {
    let total = plan.stats.total_candidates;
    let fraction = |removed: usize| if total == 0 { 0.0 } else { removed as f64 / total as f64 };

    let removed = pass_skip_deterministic(&mut plan);
    plan.stats.per_pass_removed.push(PassStats {
        pass: PASS_SKIP_DETERMINISTIC.into(),
        removed,
        fraction: fraction(removed),
        rewritten: 0,
    });

    let (removed, rewritten) = pass_consolidate(&mut plan, ir, spec);
    plan.stats.per_pass_removed.push(PassStats {
        pass: PASS_CONSOLIDATE.into(),
        removed,
        fraction: fraction(removed),
        rewritten,
    });

    let removed = pass_eschew_reads(&mut plan);
    plan.stats.per_pass_removed.push(PassStats {
        pass: PASS_ESCHEW_READS.into(),
        removed,
        fraction: fraction(removed),
        rewritten: 0,
    });

    let rewritten = pass_shortcut_heap(&mut plan);
    plan.stats.per_pass_removed.push(PassStats {
        pass: PASS_SHORTCUT_HEAP.into(),
        removed: 0,
        fraction: 0.0,
        rewritten,
    });

    plan.stats.after_optimization = plan.probes.len();
    debug_assert_eq!(
        plan.stats.after_optimization + plan.stats.removed_total(),
        plan.stats.total_candidates
    );
    plan
}

/// Pure accounting over an (optimized) plan's statistics.
pub fn reduction_report(plan: &EnforcementPlan) -> ReductionStats {
    plan.stats.clone()
}

/// Pass 1: writes through `rip`-relative or frame-relative constant-offset
/// expressions always land where the analyzer said they would, so their
/// probes go away. Scaled-index expressions stay probed.
fn pass_skip_deterministic(plan: &mut EnforcementPlan) -> usize {
    let doomed: Vec<u64> = plan
        .probes
        .iter()
        .filter(|(_, p)| {
            p.class.category == Category::MemoryAccess
                && p.class.access == Some(AccessKind::Write)
                && p.class.deterministic_addr
                && matches!(p.check, CheckKind::StackRangeCheck | CheckKind::GlobalAccessCheck)
        })
        .map(|(addr, _)| *addr)
        .collect();
    for addr in &doomed {
        plan.probes.remove(addr);
    }
    doomed.len()
}

/// Register the instruction writes, if any. Control transfers are handled
/// separately as hard group breaks.
fn written_register(insn: &Instruction) -> Option<&str> {
    match insn.mnemonic.as_str() {
        "pop" => insn.operands.first(),
        "cmp" | "test" | "push" => None,
        _ => insn.operands.last(),
    }
    .filter(|op| op.kind == OperandKind::Register)
    .and_then(|op| op.reg.as_deref())
}

fn is_control_transfer(insn: &Instruction) -> bool {
    let m = insn.mnemonic.as_str();
    m == "call" || m == "ret" || m.starts_with('j')
}

/// A probed heap write eligible for consolidation: constant offset from an
/// unscaled base register.
fn consolidation_key(plan: &EnforcementPlan, insn: &Instruction) -> Option<(String, i64)> {
    let probe = plan.probes.get(&insn.addr)?;
    if probe.class.access != Some(AccessKind::Write) {
        return None;
    }
    if !matches!(probe.check, CheckKind::HeapTypeCheck { .. }) {
        return None;
    }
    let mem = insn.operands.iter().find(|op| op.kind == OperandKind::MemRef)?;
    if mem.index.is_some() {
        return None;
    }
    let base = mem.base.as_deref()?;
    Some((base.to_string(), mem.disp.unwrap_or(0)))
}

/// Pass 2: consecutive same-base writes collapse into one check over the
/// extremal offsets. Consecutive means: same function, no intervening
/// control transfer, and no intervening write to the base register. The
/// dedicated return-address integrity probe is retired here as well, since
/// stack writes are already scrutinized.
fn pass_consolidate(
    plan: &mut EnforcementPlan,
    ir: &[Instruction],
    spec: &CompartmentSpec,
) -> (usize, usize) {
    let mut removed = 0usize;
    let mut rewritten = 0usize;

    // Greedy left-to-right scan for same-base runs.
    let mut group: Vec<(u64, i64, Vec<u64>)> = Vec::new(); // (addr, disp, expected)
    let mut group_base: Option<String> = None;
    let mut group_func: Option<&str> = None;

    let flush =
        |plan: &mut EnforcementPlan, group: &mut Vec<(u64, i64, Vec<u64>)>, removed: &mut usize, rewritten: &mut usize| {
            if group.len() >= 2 {
                let anchor = group[0].0;
                let anchor_off = group[0].1;
                let min_off = group.iter().map(|g| g.1).min().unwrap();
                let max_off = group.iter().map(|g| g.1).max().unwrap();
                let expected: BTreeSet<u64> =
                    group.iter().flat_map(|g| g.2.iter().copied()).collect();
                for (addr, _, _) in group.iter().skip(1) {
                    plan.probes.remove(addr);
                    *removed += 1;
                }
                let probe = plan.probes.get_mut(&anchor).expect("anchor probed");
                probe.check = CheckKind::ConsolidatedRangeCheck {
                    min_off,
                    max_off,
                    anchor_off,
                    expected: expected.into_iter().collect(),
                };
                *rewritten += 1;
            }
            group.clear();
        };

    for insn in ir.iter().filter(|i| spec.contains_code(i.addr)) {
        if group_func != Some(insn.func.as_str()) || is_control_transfer(insn) {
            flush(plan, &mut group, &mut removed, &mut rewritten);
            group_base = None;
            group_func = Some(insn.func.as_str());
            if is_control_transfer(insn) {
                continue;
            }
        }
        if let (Some(base), Some(written)) = (group_base.as_deref(), written_register(insn)) {
            if base == written {
                flush(plan, &mut group, &mut removed, &mut rewritten);
                group_base = None;
            }
        }
        match consolidation_key(plan, insn) {
            Some((base, disp)) => {
                if group_base.as_deref() != Some(base.as_str()) {
                    flush(plan, &mut group, &mut removed, &mut rewritten);
                    group_base = Some(base);
                }
                let expected = match &plan.probes[&insn.addr].check {
                    CheckKind::HeapTypeCheck { expected } => expected.clone(),
                    _ => unreachable!(),
                };
                group.push((insn.addr, disp, expected));
            }
            None => {
                // Non-candidate instructions break the run only when they
                // transfer control or clobber the base (handled above).
            }
        }
    }
    flush(plan, &mut group, &mut removed, &mut rewritten);

    // Return-address integrity probes.
    let rets: Vec<u64> = plan
        .probes
        .iter()
        .filter(|(_, p)| {
            p.check == CheckKind::CfiCheck && p.class.target_loc.as_deref() == Some("return-slot")
        })
        .map(|(a, _)| *a)
        .collect();
    for addr in &rets {
        plan.probes.remove(addr);
        removed += 1;
    }

    (removed, rewritten)
}

/// Pass 3: memory overreads are low risk; every read probe goes away.
fn pass_eschew_reads(plan: &mut EnforcementPlan) -> usize {
    let doomed: Vec<u64> = plan
        .probes
        .iter()
        .filter(|(_, p)| p.class.access == Some(AccessKind::Read))
        .map(|(a, _)| *a)
        .collect();
    for addr in &doomed {
        plan.probes.remove(addr);
    }
    doomed.len()
}

/// Pass 4: a heap check whose static analysis yields exactly one candidate
/// type becomes a single equality against that type's cache.
fn pass_shortcut_heap(plan: &mut EnforcementPlan) -> usize {
    let mut rewritten = 0usize;
    for probe in plan.probes.values_mut() {
        if let CheckKind::HeapTypeCheck { expected } = &probe.check {
            if expected.len() == 1 {
                probe.check = CheckKind::ShortcutCacheCheck { cache_ref: expected[0] };
                rewritten += 1;
            }
        }
    }
    rewritten
}
