//! The fixed micro-world every fixture shares: memory layout, a small
//! compartment program, kernel stubs, and the type palette with its
//! characteristic content patterns.

use crate::model::{
    AddrRange, CompartmentSpec, ControlFlowGraph, Instruction, InterfaceContract, LayoutRegion,
    Operand, RegionClass, TypeId, ValuePredicate,
};
use crate::rng::XorShift64Star;

/// Well-known addresses of the micro-world.
#[derive(Debug, Clone, Copy)]
pub struct WorldAddrs;

impl WorldAddrs {
    pub const KERNEL_CODE: AddrRange = AddrRange { lo: 0x1000, hi: 0x5000 };
    pub const COMPARTMENT_CODE: AddrRange = AddrRange { lo: 0x5000, hi: 0x9000 };
    pub const KERNEL_DATA: AddrRange = AddrRange { lo: 0x10000, hi: 0x20000 };
    pub const COMPARTMENT_DATA: AddrRange = AddrRange { lo: 0x20000, hi: 0x30000 };
    pub const EBPF_PROGRAMS: AddrRange = AddrRange { lo: 0x30000, hi: 0x38000 };
    pub const KERNEL_STACK: AddrRange = AddrRange { lo: 0x40000, hi: 0x50000 };
    pub const KERNEL_HEAP: AddrRange = AddrRange { lo: 0x100000, hi: 0x900000 };

    /// Kernel stubs.
    pub const ALLOC_FN: u64 = 0x1000;
    pub const FREE_FN: u64 = 0x1100;
    pub const MEMCPY_FN: u64 = 0x1200;
    pub const FILE_OPEN_FN: u64 = 0x1300;
    /// Legal return target of the compartment entry (its kernel caller).
    pub const RET_TARGET: u64 = 0x4200;

    /// Compartment instruction sites.
    pub const ENTRY: u64 = 0x5000;
    pub const FRAME_WRITE: u64 = 0x5008;
    pub const STACK_WRITE: u64 = 0x5010;
    pub const GLOBAL_READ: u64 = 0x5018;
    pub const GLOBAL_WRITE: u64 = 0x5020;
    pub const ALLOC_CALL: u64 = 0x5028;
    pub const HEAP_WRITE_A0: u64 = 0x5030;
    pub const HEAP_WRITE_A1: u64 = 0x5038;
    pub const FREE_CALL: u64 = 0x5040;
    pub const HEAP_WRITE_B: u64 = 0x5048;
    pub const INDIRECT_CALL: u64 = 0x5050;
    pub const CALLOUT_MEMCPY: u64 = 0x5058;
    pub const AFTER_MEMCPY: u64 = 0x5060;
    pub const CALLOUT_OPEN: u64 = 0x5068;
    pub const AFTER_OPEN: u64 = 0x5070;
    pub const UAF_WRITE: u64 = 0x5078;
    pub const MULTI_WRITE: u64 = 0x5080;
    pub const AUDIT_FREE_CALL: u64 = 0x5088;
    pub const RET: u64 = 0x5090;
    pub const HELPER: u64 = 0x5800;
}

/// Type ids of the scenario palette.
pub const TYPE_OWNED_A: u64 = 1;
pub const TYPE_OWNED_B: u64 = 2;
pub const TYPE_CO_OWNED: u64 = 3;
pub const TYPE_KERNEL_U: u64 = 4;
pub const TYPE_KERNEL_K: u64 = 5;
pub const TYPE_KERNEL_V: u64 = 6;
pub const TYPE_PAGES: u64 = 7;

/// Content pattern of one object type: a magic in word 0, a group word, and
/// two redundant per-type code words. Everything beyond is per-row noise.
#[derive(Debug, Clone)]
pub struct TypePattern {
    pub info: TypeId,
    pub magic: u64,
    pub in_compartment: bool,
}

const GROUP_COMPARTMENT: u64 = 111_111;
const GROUP_KERNEL: u64 = 222_222;

pub fn palette_type(id: u64, in_compartment: bool) -> TypePattern {
    let nominal_size = 32 + ((id - 1) % 6) * 32;
    TypePattern {
        info: TypeId { id, name: format!("obj_type_{id}"), nominal_size },
        magic: 4096 + 4 * id,
        in_compartment,
    }
}

/// `n_types` patterns; the first third belongs to the compartment.
pub fn type_palette(n_types: usize) -> Vec<TypePattern> {
    let owned = (n_types / 3).max(1);
    (1..=n_types as u64).map(|id| palette_type(id, id <= owned as u64)).collect()
}

impl TypePattern {
    /// Object content at free time. With probability `separability` the
    /// magic word is intact; otherwise it is swapped for another same-group
    /// type's magic. Words 2 and 3 always identify the type; the rest is
    /// bounded noise.
    pub fn content(
        &self,
        rng: &mut XorShift64Star,
        separability: f64,
        group: &[TypePattern],
    ) -> Vec<u8> {
        let id = self.info.id;
        let n_words = (self.info.nominal_size / 8) as usize;
        let mut words = vec![0u64; n_words];
        let clean = rng.below(1_000_000) < (separability * 1_000_000.0) as u64;
        words[0] = if clean {
            self.magic
        } else {
            let peers: Vec<&TypePattern> = group
                .iter()
                .filter(|t| t.in_compartment == self.in_compartment && t.info.id != id)
                .collect();
            if peers.is_empty() {
                self.magic
            } else {
                peers[rng.below(peers.len() as u64) as usize].magic
            }
        };
        if n_words > 1 {
            words[1] = if self.in_compartment { GROUP_COMPARTMENT } else { GROUP_KERNEL };
        }
        if n_words > 2 {
            words[2] = 100 * id;
        }
        if n_words > 3 {
            words[3] = 50 * id + rng.below(4);
        }
        for w in words.iter_mut().skip(4) {
            *w = rng.below(64);
        }
        words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

fn insn(
    addr: u64,
    func: &str,
    offset: u64,
    mnemonic: &str,
    operands: Vec<Operand>,
    type_hints: Vec<u64>,
) -> Instruction {
    Instruction {
        addr,
        func: func.into(),
        offset,
        mnemonic: mnemonic.into(),
        operands,
        is_compartment: WorldAddrs::COMPARTMENT_CODE.contains(addr),
        type_hints,
    }
}

/// The compartment program plus kernel stubs.
pub fn world_ir() -> Vec<Instruction> {
    let e = WorldAddrs::ENTRY;
    vec![
        // Kernel stubs: one entry instruction each so calls resolve to names.
        insn(WorldAddrs::ALLOC_FN, "kmalloc", 0, "nop", vec![], vec![]),
        insn(WorldAddrs::FREE_FN, "kfree", 0, "nop", vec![], vec![]),
        insn(WorldAddrs::MEMCPY_FN, "memcpy", 0, "nop", vec![], vec![]),
        insn(WorldAddrs::FILE_OPEN_FN, "file_open", 0, "nop", vec![], vec![]),
        insn(WorldAddrs::RET_TARGET, "tc_classify", 0, "nop", vec![], vec![]),
        // Compartment entry function.
        insn(e, "comp_entry", 0, "push", vec![Operand::register("rbp")], vec![]),
        insn(
            WorldAddrs::FRAME_WRITE,
            "comp_entry",
            WorldAddrs::FRAME_WRITE - e,
            "mov",
            vec![Operand::register("rax"), Operand::mem(Some("rbp"), None, None, Some(-0x18))],
            vec![],
        ),
        insn(
            WorldAddrs::STACK_WRITE,
            "comp_entry",
            WorldAddrs::STACK_WRITE - e,
            "mov",
            vec![Operand::register("rbx"), Operand::mem(Some("rsp"), Some("rax"), Some(8), Some(0))],
            vec![],
        ),
        insn(
            WorldAddrs::GLOBAL_READ,
            "comp_entry",
            WorldAddrs::GLOBAL_READ - e,
            "mov",
            vec![Operand::mem(Some("rip"), None, None, Some(0x100)), Operand::register("rax")],
            vec![],
        ),
        insn(
            WorldAddrs::GLOBAL_WRITE,
            "comp_entry",
            WorldAddrs::GLOBAL_WRITE - e,
            "mov",
            vec![Operand::register("rax"), Operand::mem(Some("rip"), None, None, Some(0x200))],
            vec![],
        ),
        insn(
            WorldAddrs::ALLOC_CALL,
            "comp_entry",
            WorldAddrs::ALLOC_CALL - e,
            "call",
            vec![Operand::address(WorldAddrs::ALLOC_FN)],
            vec![],
        ),
        insn(
            WorldAddrs::HEAP_WRITE_A0,
            "comp_entry",
            WorldAddrs::HEAP_WRITE_A0 - e,
            "mov",
            vec![Operand::register("rax"), Operand::mem(Some("rdi"), None, None, Some(0))],
            vec![TYPE_OWNED_A],
        ),
        insn(
            WorldAddrs::HEAP_WRITE_A1,
            "comp_entry",
            WorldAddrs::HEAP_WRITE_A1 - e,
            "mov",
            vec![Operand::register("rbx"), Operand::mem(Some("rdi"), None, None, Some(8))],
            vec![TYPE_OWNED_A],
        ),
        insn(
            WorldAddrs::FREE_CALL,
            "comp_entry",
            WorldAddrs::FREE_CALL - e,
            "call",
            vec![Operand::address(WorldAddrs::FREE_FN)],
            vec![TYPE_OWNED_A, TYPE_OWNED_B, TYPE_CO_OWNED, TYPE_PAGES],
        ),
        insn(
            WorldAddrs::HEAP_WRITE_B,
            "comp_entry",
            WorldAddrs::HEAP_WRITE_B - e,
            "mov",
            vec![Operand::register("rcx"), Operand::mem(Some("rsi"), None, None, Some(8))],
            vec![TYPE_OWNED_B],
        ),
        insn(
            WorldAddrs::INDIRECT_CALL,
            "comp_entry",
            WorldAddrs::INDIRECT_CALL - e,
            "call",
            vec![Operand::register("rax")],
            vec![],
        ),
        insn(
            WorldAddrs::CALLOUT_MEMCPY,
            "comp_entry",
            WorldAddrs::CALLOUT_MEMCPY - e,
            "call",
            vec![Operand::address(WorldAddrs::MEMCPY_FN)],
            vec![],
        ),
        insn(
            WorldAddrs::AFTER_MEMCPY,
            "comp_entry",
            WorldAddrs::AFTER_MEMCPY - e,
            "mov",
            vec![Operand::register("rax"), Operand::register("rbx")],
            vec![],
        ),
        insn(
            WorldAddrs::CALLOUT_OPEN,
            "comp_entry",
            WorldAddrs::CALLOUT_OPEN - e,
            "call",
            vec![Operand::address(WorldAddrs::FILE_OPEN_FN)],
            vec![],
        ),
        insn(WorldAddrs::AFTER_OPEN, "comp_entry", WorldAddrs::AFTER_OPEN - e, "nop", vec![], vec![]),
        insn(
            WorldAddrs::UAF_WRITE,
            "comp_entry",
            WorldAddrs::UAF_WRITE - e,
            "mov",
            vec![Operand::register("rdx"), Operand::mem(Some("r8"), None, None, Some(0))],
            vec![TYPE_OWNED_A],
        ),
        insn(
            WorldAddrs::MULTI_WRITE,
            "comp_entry",
            WorldAddrs::MULTI_WRITE - e,
            "mov",
            vec![Operand::register("rdx"), Operand::mem(Some("r9"), None, None, Some(0))],
            vec![TYPE_OWNED_A, TYPE_OWNED_B, TYPE_CO_OWNED],
        ),
        insn(
            WorldAddrs::AUDIT_FREE_CALL,
            "comp_entry",
            WorldAddrs::AUDIT_FREE_CALL - e,
            "call",
            vec![Operand::address(WorldAddrs::FREE_FN)],
            vec![TYPE_OWNED_A],
        ),
        insn(WorldAddrs::RET, "comp_entry", WorldAddrs::RET - e, "ret", vec![], vec![]),
        // A helper the indirect call may legally reach.
        insn(WorldAddrs::HELPER, "comp_helper", 0, "nop", vec![], vec![]),
    ]
}

pub fn world_cfg() -> ControlFlowGraph {
    let mut cfg = ControlFlowGraph::default();
    cfg.legal_targets.insert(
        WorldAddrs::INDIRECT_CALL,
        [WorldAddrs::HELPER, WorldAddrs::ENTRY].into(),
    );
    cfg.legal_targets.insert(WorldAddrs::RET, [WorldAddrs::RET_TARGET].into());
    cfg
}

/// The compartment spec for a palette. `sensitive_addr` feeds the memcpy
/// destination contract.
pub fn world_spec(palette: &[TypePattern], sensitive_addr: u64) -> CompartmentSpec {
    CompartmentSpec {
        code_ranges: vec![WorldAddrs::COMPARTMENT_CODE],
        entry_functions: ["comp_entry".to_string()].into(),
        external_calls: [WorldAddrs::CALLOUT_MEMCPY, WorldAddrs::CALLOUT_OPEN].into(),
        owned_types: palette
            .iter()
            .filter(|t| t.in_compartment && t.info.id != TYPE_CO_OWNED)
            .map(|t| t.info.id)
            .collect(),
        co_owned_types: palette
            .iter()
            .filter(|t| t.info.id == TYPE_CO_OWNED)
            .map(|t| t.info.id)
            .collect(),
        interface_contracts: [
            (
                "memcpy".to_string(),
                InterfaceContract {
                    arg: Some(ValuePredicate::NoneOf { values: vec![sensitive_addr as i64] }),
                    ret: None,
                },
            ),
            (
                "file_open".to_string(),
                InterfaceContract { arg: None, ret: Some(ValuePredicate::ZeroOrNegErrno) },
            ),
        ]
        .into(),
        types: palette.iter().map(|t| t.info.clone()).collect(),
        allocator_entries: [WorldAddrs::ALLOC_FN].into(),
        free_entries: [WorldAddrs::FREE_FN].into(),
        layout: vec![
            LayoutRegion { class: RegionClass::KernelCode, lo: WorldAddrs::KERNEL_CODE.lo, hi: WorldAddrs::KERNEL_CODE.hi },
            LayoutRegion { class: RegionClass::KernelData, lo: WorldAddrs::KERNEL_DATA.lo, hi: WorldAddrs::KERNEL_DATA.hi },
            LayoutRegion { class: RegionClass::CompartmentData, lo: WorldAddrs::COMPARTMENT_DATA.lo, hi: WorldAddrs::COMPARTMENT_DATA.hi },
            LayoutRegion { class: RegionClass::EbpfPrograms, lo: WorldAddrs::EBPF_PROGRAMS.lo, hi: WorldAddrs::EBPF_PROGRAMS.hi },
            LayoutRegion { class: RegionClass::KernelStack, lo: WorldAddrs::KERNEL_STACK.lo, hi: WorldAddrs::KERNEL_STACK.hi },
            LayoutRegion { class: RegionClass::KernelHeap, lo: WorldAddrs::KERNEL_HEAP.lo, hi: WorldAddrs::KERNEL_HEAP.hi },
        ],
    }
}
