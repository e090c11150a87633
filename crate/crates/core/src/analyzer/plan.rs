//! Enforcement plan: the per-instruction check map the engine executes.
//!
//! Serialized as `.o2cplan.json` with probes keyed by decimal address. The
//! plan also carries the CFI target map and the direct-call target names so
//! a replay needs only trace + plan + spec.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::classify::{classify_instruction, Category, InstructionClass};
use crate::model::{CompartmentSpec, ControlFlowGraph, Instruction, OperandKind};

/// The runtime check a probe performs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CheckKind {
    /// Runtime transfer target must be in the site's legal target set.
    CfiCheck,
    /// Access must stay within the subject's private stack region.
    StackRangeCheck,
    /// Accessed object must be owned/co-owned and of an expected type.
    HeapTypeCheck { expected: Vec<u64> },
    /// Access must stay within the compartment's own global data.
    GlobalAccessCheck,
    /// Switch between kernel and private stack/heap context.
    StackSwitch,
    /// Divert allocation/free to the private allocator model; free sites
    /// carry the statically expected types for audition.
    HeapDivert { expected: Vec<u64> },
    /// Authorize an outgoing argument value.
    ArgCheck,
    /// Authorize an incoming return value.
    RetCheck,
    /// One bounds check covering a consolidated run of same-base accesses;
    /// offsets are relative to the shared base, `anchor_off` is the probe's
    /// own static offset.
    ConsolidatedRangeCheck { min_off: i64, max_off: i64, anchor_off: i64, expected: Vec<u64> },
    /// Single equality against the one cache the site can legally touch.
    ShortcutCacheCheck { cache_ref: u64 },
}

/// One instrumented instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub class: InstructionClass,
    pub check: CheckKind,
}

/// Per-pass reduction accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub pass: String,
    pub removed: usize,
    /// Fraction of the unoptimized probe count.
    pub fraction: f64,
    /// Probes rewritten in place (not removed).
    pub rewritten: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionStats {
    pub total_candidates: usize,
    pub after_optimization: usize,
    pub per_pass_removed: Vec<PassStats>,
}

impl ReductionStats {
    pub fn removed_total(&self) -> usize {
        self.per_pass_removed.iter().map(|p| p.removed).sum()
    }
}

/// The analyzer's output: probes, reduction statistics, the CFI map, and
/// resolved direct-call targets for interface checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnforcementPlan {
    pub probes: BTreeMap<u64, ProbeSpec>,
    pub stats: ReductionStats,
    /// Indirect-transfer site -> legal target set (loaded from the CFG).
    #[serde(default)]
    pub cfi_targets: BTreeMap<u64, BTreeSet<u64>>,
    /// Direct-call site -> callee name, for argument/return contracts.
    #[serde(default)]
    pub call_targets: BTreeMap<u64, String>,
    /// Classifier warnings collected while building the plan.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EnforcementPlan {
    pub fn probe(&self, site: u64) -> Option<&ProbeSpec> {
        self.probes.get(&site)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("indirect-transfer sites missing from the control-flow graph: {}",
        .sites.iter().map(|s| format!("{s:#x}")).collect::<Vec<_>>().join(", "))]
    MissingCfiTargets { sites: Vec<u64> },
    #[error("entry functions not found inside the compartment code ranges: {}", .names.join(", "))]
    EntryOutsideCompartment { names: Vec<String> },
}

/// Builds the unoptimized plan: one probe per in-compartment instruction of
/// an enforceable category, stack switches at entry functions, and stack
/// switches at each call-out site plus the instruction at the next address.
pub fn build_plan(
    ir: &[Instruction],
    cfg: &ControlFlowGraph,
    spec: &CompartmentSpec,
) -> Result<EnforcementPlan, PlanError> {
    let mut plan = EnforcementPlan { cfi_targets: cfg.legal_targets.clone(), ..Default::default() };

    // Function entry addresses let direct-call targets resolve to names.
    let mut func_entry: BTreeMap<u64, &str> = BTreeMap::new();
    for insn in ir {
        if insn.offset == 0 {
            func_entry.insert(insn.addr, insn.func.as_str());
        }
    }
    for insn in ir {
        if insn.mnemonic == "call" {
            if let Some(op) = insn.operands.first() {
                if matches!(op.kind, OperandKind::Address | OperandKind::Code) {
                    if let Some(name) = op.value.and_then(|t| func_entry.get(&t)) {
                        plan.call_targets.insert(insn.addr, name.to_string());
                    }
                }
            }
        }
    }

    let missing_entries: Vec<String> = spec
        .entry_functions
        .iter()
        .filter(|name| {
            !ir.iter()
                .any(|i| i.offset == 0 && &i.func == *name && spec.contains_code(i.addr))
        })
        .cloned()
        .collect();
    if !missing_entries.is_empty() {
        return Err(PlanError::EntryOutsideCompartment { names: missing_entries });
    }

    let mut missing_cfi: Vec<u64> = Vec::new();
    for insn in ir {
        if !spec.contains_code(insn.addr) {
            continue;
        }
        let (class, warning) = classify_instruction(insn, spec);
        if let Some(w) = warning {
            plan.warnings.push(w);
        }
        let check = match class.category {
            Category::IndirectTransfer => {
                if !cfg.legal_targets.contains_key(&insn.addr) {
                    missing_cfi.push(insn.addr);
                    continue;
                }
                CheckKind::CfiCheck
            }
            Category::MemoryAccess => memory_check(&class, insn),
            Category::SubjectSwitch => CheckKind::StackSwitch,
            Category::AllocationCall | Category::FreeCall => {
                CheckKind::HeapDivert { expected: insn.type_hints.clone() }
            }
            Category::None => continue,
        };
        plan.probes.insert(insn.addr, ProbeSpec { class, check });
    }

    if !missing_cfi.is_empty() {
        return Err(PlanError::MissingCfiTargets { sites: missing_cfi });
    }

    // The instruction next to a call-out is probed too, so the private
    // stack and heap can be switched back after the external call returns.
    for &call_site in &spec.external_calls {
        if let Some(next) = ir.iter().find(|i| i.addr > call_site && spec.contains_code(i.addr)) {
            plan.probes.insert(
                next.addr,
                ProbeSpec {
                    class: InstructionClass {
                        category: Category::SubjectSwitch,
                        access: None,
                        target_loc: None,
                        deterministic_addr: false,
                    },
                    check: CheckKind::StackSwitch,
                },
            );
        }
    }

    plan.stats.total_candidates = plan.probes.len();
    plan.stats.after_optimization = plan.probes.len();
    Ok(plan)
}

/// Picks the data-integrity check for a memory access from where its address
/// expression points: frame-relative to the stack, `rip`-relative or
/// absolute to globals, anything else to the heap.
fn memory_check(class: &InstructionClass, insn: &Instruction) -> CheckKind {
    let loc = class.target_loc.as_deref().unwrap_or("");
    if loc.contains("%rsp") || loc.contains("%rbp") {
        return CheckKind::StackRangeCheck;
    }
    if loc.contains("%rip") || !loc.contains('%') {
        return CheckKind::GlobalAccessCheck;
    }
    CheckKind::HeapTypeCheck { expected: insn.type_hints.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AddrRange, Operand};

    fn insn(addr: u64, func: &str, offset: u64, mnemonic: &str, operands: Vec<Operand>) -> Instruction {
        Instruction {
            addr,
            func: func.into(),
            offset,
            mnemonic: mnemonic.into(),
            operands,
            is_compartment: true,
            type_hints: vec![],
        }
    }

    fn base_spec() -> CompartmentSpec {
        CompartmentSpec { code_ranges: vec![AddrRange::new(0x1000, 0x2000)], ..Default::default() }
    }

    #[test]
    fn one_indirect_call_yields_one_cfi_probe() {
        let ir = vec![insn(0x1000, "f", 0, "call", vec![Operand::register("rax")])];
        let mut cfg = ControlFlowGraph::default();
        cfg.legal_targets.insert(0x1000, [0x1100u64].into());
        let plan = build_plan(&ir, &cfg, &base_spec()).unwrap();
        assert_eq!(plan.probes.len(), 1);
        assert_eq!(plan.probes[&0x1000].check, CheckKind::CfiCheck);
        assert_eq!(plan.stats.total_candidates, 1);
    }

    #[test]
    fn missing_cfg_entry_is_configuration_error() {
        let ir = vec![insn(0x1000, "f", 0, "call", vec![Operand::register("rax")])];
        let err = build_plan(&ir, &ControlFlowGraph::default(), &base_spec()).unwrap_err();
        match err {
            PlanError::MissingCfiTargets { sites } => assert_eq!(sites, vec![0x1000]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn entry_function_outside_compartment_rejected() {
        let ir = vec![insn(0x9000, "south", 0, "nop", vec![])];
        let mut spec = base_spec();
        spec.entry_functions.insert("south".into());
        let err = build_plan(&ir, &ControlFlowGraph::default(), &spec).unwrap_err();
        assert!(matches!(err, PlanError::EntryOutsideCompartment { .. }), "{err}");
    }

    #[test]
    fn entry_function_gets_stack_switch_at_first_instruction() {
        let ir = vec![
            insn(0x1000, "f", 0, "push", vec![Operand::register("rbp")]),
            insn(0x1001, "f", 1, "ret", vec![]),
        ];
        let mut spec = base_spec();
        spec.entry_functions.insert("f".into());
        let mut cfg = ControlFlowGraph::default();
        cfg.legal_targets.insert(0x1001, [0x900u64].into());
        let plan = build_plan(&ir, &cfg, &spec).unwrap();
        assert_eq!(plan.probes[&0x1000].check, CheckKind::StackSwitch);
    }

    /// Call-out at A probes A and the next instruction B. Expected plan for
    /// the 3-instruction fixture, enumerated by hand:
    ///   0x1000 call-out      -> StackSwitch
    ///   0x1005 next insn     -> StackSwitch
    ///   0x100a frame store   -> StackRangeCheck
    #[test]
    fn call_out_probes_call_and_next_address() {
        let ir = vec![
            insn(0x1000, "f", 0, "call", vec![Operand::address(0x9000)]),
            insn(0x1005, "f", 5, "mov", vec![Operand::register("rax"), Operand::register("rbx")]),
            insn(
                0x100a,
                "f",
                10,
                "mov",
                vec![Operand::register("rax"), Operand::mem(Some("rbp"), None, None, Some(0x10))],
            ),
        ];
        let mut spec = base_spec();
        spec.external_calls.insert(0x1000);
        let plan = build_plan(&ir, &ControlFlowGraph::default(), &spec).unwrap();
        let checks: Vec<(u64, &CheckKind)> = plan.probes.iter().map(|(a, p)| (*a, &p.check)).collect();
        assert_eq!(checks.len(), 3);
        assert_eq!(checks[0], (0x1000, &CheckKind::StackSwitch));
        assert_eq!(checks[1], (0x1005, &CheckKind::StackSwitch));
        assert_eq!(checks[2], (0x100a, &CheckKind::StackRangeCheck));
    }

    #[test]
    fn heap_write_probe_carries_type_hints() {
        let mut i = insn(
            0x1000,
            "f",
            0,
            "mov",
            vec![Operand::register("rax"), Operand::mem(Some("rdi"), None, None, Some(8))],
        );
        i.type_hints = vec![7];
        let plan = build_plan(&[i], &ControlFlowGraph::default(), &base_spec()).unwrap();
        assert_eq!(plan.probes[&0x1000].check, CheckKind::HeapTypeCheck { expected: vec![7] });
    }

    #[test]
    fn out_of_compartment_instructions_are_ignored() {
        let ir = vec![insn(0x9000, "k", 0, "mov", vec![
            Operand::register("rax"),
            Operand::mem(Some("rdi"), None, None, Some(0)),
        ])];
        let plan = build_plan(&ir, &ControlFlowGraph::default(), &base_spec()).unwrap();
        assert!(plan.probes.is_empty());
    }

    #[test]
    fn call_targets_resolved_by_name() {
        let ir = vec![
            insn(0x1000, "f", 0, "call", vec![Operand::address(0x9000)]),
            insn(0x9000, "memcpy", 0, "nop", vec![]),
        ];
        let mut spec = base_spec();
        spec.external_calls.insert(0x1000);
        let plan = build_plan(&ir, &ControlFlowGraph::default(), &spec).unwrap();
        assert_eq!(plan.call_targets[&0x1000], "memcpy");
    }

    #[test]
    fn plan_json_round_trip() {
        let ir = vec![insn(0x1000, "f", 0, "push", vec![Operand::register("rbp")])];
        let plan = build_plan(&ir, &ControlFlowGraph::default(), &base_spec()).unwrap();
        let text = plan.to_json();
        assert!(text.contains("\"4096\""), "probes keyed by decimal address: {text}");
        let back = EnforcementPlan::from_json(&text).unwrap();
        assert_eq!(back, plan);
    }
}
