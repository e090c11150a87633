//! Scenario construction: benign workloads, the eight attack classes, and
//! the training world for the profiler.

use serde::{Deserialize, Serialize};

use super::world::{
    type_palette, world_cfg, world_ir, world_spec, TypePattern, WorldAddrs, TYPE_KERNEL_K,
    TYPE_KERNEL_V, TYPE_OWNED_A, TYPE_OWNED_B, TYPE_PAGES,
};
use crate::enforce::{Decision, Phase, ReplayConfig, ViolationReason};
use crate::model::{
    AllocatorKind, CompartmentSpec, ControlFlowGraph, EventKind, Instruction, TraceEvent,
};
use crate::rng::XorShift64Star;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    Benign,
    UafWrite,
    HeapOverflow,
    WildAddress,
    StackOverflowRet,
    InvalidFree,
    CfiHijack,
    ConfusedDeputyArg,
    IagoReturn,
}

impl ScenarioKind {
    pub const ALL_ATTACKS: [ScenarioKind; 8] = [
        ScenarioKind::UafWrite,
        ScenarioKind::HeapOverflow,
        ScenarioKind::WildAddress,
        ScenarioKind::StackOverflowRet,
        ScenarioKind::InvalidFree,
        ScenarioKind::CfiHijack,
        ScenarioKind::ConfusedDeputyArg,
        ScenarioKind::IagoReturn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Benign => "benign",
            ScenarioKind::UafWrite => "uaf-write",
            ScenarioKind::HeapOverflow => "heap-overflow",
            ScenarioKind::WildAddress => "wild-address",
            ScenarioKind::StackOverflowRet => "stack-overflow-ret",
            ScenarioKind::InvalidFree => "invalid-free",
            ScenarioKind::CfiHijack => "cfi-hijack",
            ScenarioKind::ConfusedDeputyArg => "confused-deputy-arg",
            ScenarioKind::IagoReturn => "iago-return",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(ScenarioKind::Benign),
            "uaf-write" => Ok(ScenarioKind::UafWrite),
            "heap-overflow" => Ok(ScenarioKind::HeapOverflow),
            "wild-address" => Ok(ScenarioKind::WildAddress),
            "stack-overflow-ret" => Ok(ScenarioKind::StackOverflowRet),
            "invalid-free" => Ok(ScenarioKind::InvalidFree),
            "cfi-hijack" => Ok(ScenarioKind::CfiHijack),
            "confused-deputy-arg" => Ok(ScenarioKind::ConfusedDeputyArg),
            "iago-return" => Ok(ScenarioKind::IagoReturn),
            other => Err(format!("unknown scenario kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Objects alive before time 0.
    pub untracked: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams { untracked: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub params: ScenarioParams,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Scenario {
            name: format!("{}-{seed}", kind.as_str()),
            kind,
            seed,
            params: ScenarioParams::default(),
        }
    }
}

/// A verdict the replay is expected to produce, keyed by tick and site.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpectedVerdict {
    pub tick: u64,
    pub site: u64,
    pub decision: Decision,
    pub reason: ViolationReason,
}

/// Everything a scenario emits.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub scenario: Scenario,
    pub ir: Vec<Instruction>,
    pub cfg: ControlFlowGraph,
    pub spec: CompartmentSpec,
    pub trace: Vec<TraceEvent>,
    pub expected: Vec<ExpectedVerdict>,
    pub config: ReplayConfig,
    pub palette: Vec<TypePattern>,
}

const TIME_ZERO: u64 = 100;
const HEAP_A: u64 = 0x100000;
const HEAP_B: u64 = 0x100100;
const HEAP_PAGES: u64 = 0x180000;
const KOBJ: u64 = 0x110000;
const VOBJ: u64 = 0x1f0000;
const PRE_BASE: u64 = 0x108000;
const UAF_P: u64 = 0x112000;
/// Kernel call site standing in for the rest of the kernel.
const KSITE: u64 = WorldAddrs::RET_TARGET;

struct TraceBuilder {
    events: Vec<TraceEvent>,
    tick: u64,
}

impl TraceBuilder {
    fn new() -> Self {
        TraceBuilder { events: Vec::new(), tick: 0 }
    }

    fn push(&mut self, mut ev: TraceEvent) -> u64 {
        self.tick += 1;
        ev.tick = self.tick;
        let tick = self.tick;
        self.events.push(ev);
        tick
    }

    fn alloc(&mut self, site: u64, addr: u64, size: u64, ty: u64, allocator: AllocatorKind, pre_t0: bool) -> u64 {
        let mut e = TraceEvent::new(0, EventKind::Alloc);
        e.site = Some(site);
        e.addr = Some(addr);
        e.size = Some(size);
        e.type_id = Some(ty);
        e.allocator = Some(allocator);
        e.pre_t0 = pre_t0;
        self.push(e)
    }

    fn free(&mut self, site: u64, addr: u64, payload: Option<Vec<u8>>) -> u64 {
        let mut e = TraceEvent::new(0, EventKind::Free);
        e.site = Some(site);
        e.addr = Some(addr);
        e.payload = payload;
        self.push(e)
    }

    fn write(&mut self, site: u64, addr: u64, size: u64) -> u64 {
        let mut e = TraceEvent::new(0, EventKind::Write);
        e.site = Some(site);
        e.addr = Some(addr);
        e.size = Some(size);
        self.push(e)
    }

    fn read(&mut self, site: u64, addr: u64, size: u64) -> u64 {
        let mut e = TraceEvent::new(0, EventKind::Read);
        e.site = Some(site);
        e.addr = Some(addr);
        e.size = Some(size);
        self.push(e)
    }

    fn transfer(&mut self, kind: EventKind, site: u64, value: u64) -> u64 {
        let mut e = TraceEvent::new(0, kind);
        e.site = Some(site);
        e.value = Some(value);
        self.push(e)
    }

    fn switch(&mut self, kind: EventKind, site: u64) -> u64 {
        let mut e = TraceEvent::new(0, kind);
        e.site = Some(site);
        if kind == EventKind::EnterCompartment {
            e.value = Some(0);
        }
        self.push(e)
    }
}

/// Generates the bundle for a scenario. The expected Deny/Audit verdicts are
/// pinned during construction; everything else must replay as Allow.
pub fn generate(scenario: &Scenario) -> ScenarioBundle {
    let mut rng = XorShift64Star::new(scenario.seed);
    let palette = type_palette(7);
    let by_id = |id: u64| -> &TypePattern { palette.iter().find(|t| t.info.id == id).unwrap() };
    let spec = world_spec(&palette, KOBJ);
    let config = ReplayConfig { start_phase: Phase::Zero, t0: TIME_ZERO, ..Default::default() };
    let stack_base = config.private_stack_base;
    let stack_size = config.stack_size;

    let mut tb = TraceBuilder::new();
    let mut expected: Vec<ExpectedVerdict> = Vec::new();
    let mut expect = |tick: u64, site: u64, decision: Decision, reason: ViolationReason| {
        // Closure capturing is awkward across the long builder; filled inline below.
        (tick, site, decision, reason)
    };
    let _ = &mut expect;

    // Pre-history: objects allocated before time 0 are untracked. The
    // use-after-free scenario adds one more at a recyclable address.
    let n_untracked = scenario.params.untracked.max(1);
    let size_a = by_id(TYPE_OWNED_A).info.nominal_size;
    for i in 0..n_untracked {
        tb.alloc(KSITE, PRE_BASE + i as u64 * 0x100, size_a, TYPE_OWNED_A, AllocatorKind::Slab, true);
    }
    if scenario.kind == ScenarioKind::UafWrite {
        tb.alloc(KSITE, UAF_P, size_a, TYPE_OWNED_A, AllocatorKind::Slab, true);
    }

    tb.tick = TIME_ZERO - 1;

    // Kernel housekeeping after time 0: a tracked kernel object the
    // compartment must never touch.
    let size_k = by_id(TYPE_KERNEL_K).info.nominal_size;
    tb.alloc(KSITE, KOBJ, size_k, TYPE_KERNEL_K, AllocatorKind::Slab, false);

    // Benign compartment activity.
    tb.switch(EventKind::EnterCompartment, WorldAddrs::ENTRY);
    tb.write(WorldAddrs::FRAME_WRITE, stack_base + 0x3f00, 8);
    tb.write(WorldAddrs::STACK_WRITE, stack_base + 0x3e00, 8);
    tb.read(WorldAddrs::GLOBAL_READ, WorldAddrs::COMPARTMENT_DATA.lo + 0x100, 8);
    tb.write(WorldAddrs::GLOBAL_WRITE, WorldAddrs::COMPARTMENT_DATA.lo + 0x200, 8);
    tb.alloc(WorldAddrs::ALLOC_CALL, HEAP_A, size_a, TYPE_OWNED_A, AllocatorKind::Slab, false);
    tb.write(WorldAddrs::HEAP_WRITE_A0, HEAP_A, 8);
    tb.write(WorldAddrs::HEAP_WRITE_A1, HEAP_A + 8, 8);
    let size_b = by_id(TYPE_OWNED_B).info.nominal_size;
    tb.alloc(WorldAddrs::ALLOC_CALL, HEAP_B, size_b, TYPE_OWNED_B, AllocatorKind::Slab, false);
    tb.write(WorldAddrs::HEAP_WRITE_B, HEAP_B + 8, 8);
    tb.alloc(WorldAddrs::ALLOC_CALL, HEAP_PAGES, 4096, TYPE_PAGES, AllocatorKind::Buddy, false);
    let size_v = by_id(TYPE_KERNEL_V).info.nominal_size;
    tb.alloc(KSITE, VOBJ, size_v, TYPE_KERNEL_V, AllocatorKind::Vmalloc, false);
    tb.transfer(EventKind::IndirectCall, WorldAddrs::INDIRECT_CALL, WorldAddrs::HELPER);

    // Call out to memcpy with a benign destination, then to file_open.
    tb.transfer(EventKind::ArgPass, WorldAddrs::CALLOUT_MEMCPY, HEAP_A);
    tb.switch(EventKind::ExitCompartment, WorldAddrs::CALLOUT_MEMCPY);
    tb.switch(EventKind::EnterCompartment, WorldAddrs::AFTER_MEMCPY);
    tb.transfer(EventKind::ReturnValue, WorldAddrs::CALLOUT_MEMCPY, 0);
    tb.switch(EventKind::ExitCompartment, WorldAddrs::CALLOUT_OPEN);
    tb.switch(EventKind::EnterCompartment, WorldAddrs::AFTER_OPEN);
    tb.transfer(EventKind::ReturnValue, WorldAddrs::CALLOUT_OPEN, (-22i64) as u64);
    tb.write(WorldAddrs::MULTI_WRITE, HEAP_A + 16, 8);

    // Attack-specific events.
    match scenario.kind {
        ScenarioKind::Benign => {}
        ScenarioKind::UafWrite => {
            // The kernel recycles the untracked object's memory under a
            // different type; the compartment then writes through its stale
            // pointer.
            tb.free(KSITE, UAF_P, None);
            tb.alloc(KSITE, UAF_P, size_v, TYPE_KERNEL_V, AllocatorKind::Slab, false);
            let t = tb.write(WorldAddrs::UAF_WRITE, UAF_P, 8);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::UAF_WRITE,
                decision: Decision::Deny,
                reason: ViolationReason::TypeMismatch,
            });
        }
        ScenarioKind::HeapOverflow => {
            let t = tb.write(WorldAddrs::HEAP_WRITE_B, HEAP_B + size_b.next_power_of_two() - 4, 8);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::HEAP_WRITE_B,
                decision: Decision::Deny,
                reason: ViolationReason::BoundsViolation,
            });
        }
        ScenarioKind::WildAddress => {
            let t = tb.write(WorldAddrs::HEAP_WRITE_B, 0, 8);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::HEAP_WRITE_B,
                decision: Decision::Deny,
                reason: ViolationReason::WildAddress,
            });
        }
        ScenarioKind::StackOverflowRet => {
            // The overflowing write is blocked, so the later return carries
            // its legitimate target.
            let t = tb.write(WorldAddrs::STACK_WRITE, stack_base + stack_size - 4, 8);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::STACK_WRITE,
                decision: Decision::Deny,
                reason: ViolationReason::BoundsViolation,
            });
        }
        ScenarioKind::InvalidFree => {
            let t = tb.free(WorldAddrs::FREE_CALL, KOBJ, None);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::FREE_CALL,
                decision: Decision::Deny,
                reason: ViolationReason::InvalidFree,
            });
        }
        ScenarioKind::CfiHijack => {
            let t = tb.transfer(EventKind::IndirectCall, WorldAddrs::INDIRECT_CALL, 0x4444);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::INDIRECT_CALL,
                decision: Decision::Deny,
                reason: ViolationReason::CfiViolation,
            });
        }
        ScenarioKind::ConfusedDeputyArg => {
            let t = tb.transfer(EventKind::ArgPass, WorldAddrs::CALLOUT_MEMCPY, KOBJ);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::CALLOUT_MEMCPY,
                decision: Decision::Deny,
                reason: ViolationReason::ConfusedDeputy,
            });
        }
        ScenarioKind::IagoReturn => {
            let t = tb.transfer(EventKind::ReturnValue, WorldAddrs::CALLOUT_OPEN, 42);
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::CALLOUT_OPEN,
                decision: Decision::Deny,
                reason: ViolationReason::IagoViolation,
            });
        }
    }

    // Wind down: release compartment objects, audit the untracked ones.
    tb.free(WorldAddrs::FREE_CALL, HEAP_B, Some(by_id(TYPE_OWNED_B).content(&mut rng, 1.0, &palette)));
    tb.free(WorldAddrs::FREE_CALL, HEAP_PAGES, Some(by_id(TYPE_PAGES).content(&mut rng, 1.0, &palette)));
    tb.free(KSITE, VOBJ, None);
    for i in 0..n_untracked {
        // In the use-after-free scenario the first audited object carries
        // attacker-shaped content of the wrong type.
        let corrupt = scenario.kind == ScenarioKind::UafWrite && i == 0;
        let content = if corrupt {
            by_id(TYPE_KERNEL_V).content(&mut rng, 1.0, &palette)
        } else {
            by_id(TYPE_OWNED_A).content(&mut rng, 1.0, &palette)
        };
        let t = tb.free(WorldAddrs::AUDIT_FREE_CALL, PRE_BASE + i as u64 * 0x100, Some(content));
        if corrupt {
            expected.push(ExpectedVerdict {
                tick: t,
                site: WorldAddrs::AUDIT_FREE_CALL,
                decision: Decision::Audit,
                reason: ViolationReason::TypeMismatch,
            });
        }
    }
    tb.free(WorldAddrs::FREE_CALL, HEAP_A, Some(by_id(TYPE_OWNED_A).content(&mut rng, 1.0, &palette)));
    tb.write(KSITE, WorldAddrs::KERNEL_DATA.lo + 0x10, 8);
    tb.transfer(EventKind::Return, WorldAddrs::RET, WorldAddrs::RET_TARGET);
    tb.switch(EventKind::ExitCompartment, WorldAddrs::RET);

    expected.sort();
    ScenarioBundle {
        scenario: scenario.clone(),
        ir: world_ir(),
        cfg: world_cfg(),
        spec,
        trace: tb.events,
        expected,
        config,
        palette,
    }
}

/// Emits a profiling trace: `rows_per_type` allocate/free pairs per type,
/// contents drawn from each type's pattern with the given separability.
pub fn generate_training_world(
    seed: u64,
    n_types: usize,
    rows_per_type: usize,
    separability: f64,
) -> (CompartmentSpec, Vec<TraceEvent>) {
    let mut rng = XorShift64Star::new(seed);
    let palette = type_palette(n_types);
    let spec = world_spec(&palette, KOBJ);
    let mut tb = TraceBuilder::new();
    for _ in 0..rows_per_type {
        for t in &palette {
            let addr = WorldAddrs::KERNEL_HEAP.lo + t.info.id * 0x2000;
            tb.alloc(WorldAddrs::ALLOC_FN, addr, t.info.nominal_size, t.info.id, AllocatorKind::Slab, false);
            tb.free(WorldAddrs::FREE_FN, addr, Some(t.content(&mut rng, separability, &palette)));
        }
    }
    (spec, tb.events)
}
