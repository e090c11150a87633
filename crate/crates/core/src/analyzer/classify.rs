//! Instruction classification.
//!
//! Every in-compartment instruction falls into exactly one enforcement
//! category. Calls whose operand-0 is `Address`/`Code` are direct; register
//! or memory operands make the transfer indirect. Memory access direction
//! follows source-first operand order: the last operand is the destination.

use serde::{Deserialize, Serialize};

use crate::model::{CompartmentSpec, Instruction, Operand, OperandKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    IndirectTransfer,
    MemoryAccess,
    SubjectSwitch,
    AllocationCall,
    FreeCall,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

/// Classification result attached to a probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionClass {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access: Option<AccessKind>,
    /// Where the runtime target or accessed address resides: a register
    /// name, an address expression, or `return-slot` for returns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_loc: Option<String>,
    /// The accessed address is fully determined at analysis time.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deterministic_addr: bool,
}

impl InstructionClass {
    fn none() -> Self {
        InstructionClass { category: Category::None, access: None, target_loc: None, deterministic_addr: false }
    }

    fn plain(category: Category) -> Self {
        InstructionClass { category, ..InstructionClass::none() }
    }
}

/// Mnemonics treated as transfers.
fn is_call(m: &str) -> bool {
    m == "call"
}

fn is_jump(m: &str) -> bool {
    m == "jmp" || (m.len() >= 2 && m.starts_with('j'))
}

/// Mnemonics that may touch memory when one operand is a MemRef.
const MEMORY_MNEMONICS: &[&str] = &[
    "mov", "movzx", "movsx", "xchg", "add", "sub", "and", "or", "xor", "cmp", "test", "inc",
    "dec", "stos", "stosb", "stosw", "stosd", "stosq", "out", "rep movs", "rep stos",
];

/// Mnemonics that never write memory even with a MemRef destination slot.
const READ_ONLY_MNEMONICS: &[&str] = &["cmp", "test"];

/// Mnemonics with an implicit memory destination.
const IMPLICIT_WRITE_MNEMONICS: &[&str] =
    &["stos", "stosb", "stosw", "stosd", "stosq", "out", "rep movs", "rep stos"];

fn mem_operand(insn: &Instruction) -> Option<(usize, &Operand)> {
    insn.operands.iter().enumerate().find(|(_, op)| op.kind == OperandKind::MemRef)
}

/// A `rip`-relative or frame-relative expression with no index register is
/// fixed once the instruction executes; a scaled index defeats that.
fn deterministic_mem(op: &Operand) -> bool {
    if op.index.is_some() {
        return false;
    }
    match op.base.as_deref() {
        Some("rip") | Some("rbp") | Some("rsp") => true,
        Some(_) => false,
        // Absolute displacement.
        None => op.disp.is_some(),
    }
}

/// Classifies one instruction against the compartment spec.
///
/// Returns the class plus an optional warning (unknown mnemonics are never a
/// hard failure; they classify as `None` with a warning record).
pub fn classify_instruction(
    insn: &Instruction,
    spec: &CompartmentSpec,
) -> (InstructionClass, Option<String>) {
    let m = insn.mnemonic.as_str();

    // Entry instructions of externally callable functions switch subject.
    if insn.offset == 0 && spec.entry_functions.contains(&insn.func) {
        return (InstructionClass::plain(Category::SubjectSwitch), None);
    }

    if is_call(m) {
        match insn.operands.first() {
            Some(op) if matches!(op.kind, OperandKind::Address | OperandKind::Code) => {
                let target = op.value.unwrap_or(0);
                if spec.allocator_entries.contains(&target) {
                    return (InstructionClass::plain(Category::AllocationCall), None);
                }
                if spec.free_entries.contains(&target) {
                    return (InstructionClass::plain(Category::FreeCall), None);
                }
                if spec.external_calls.contains(&insn.addr) {
                    return (InstructionClass::plain(Category::SubjectSwitch), None);
                }
                return (InstructionClass::none(), None);
            }
            Some(op) => {
                return (
                    InstructionClass {
                        category: Category::IndirectTransfer,
                        access: None,
                        target_loc: Some(op.describe()),
                        deterministic_addr: false,
                    },
                    None,
                );
            }
            None => {
                return (
                    InstructionClass::none(),
                    Some(format!("call at {:#x} has no operands", insn.addr)),
                );
            }
        }
    }

    if m == "ret" {
        return (
            InstructionClass {
                category: Category::IndirectTransfer,
                access: None,
                target_loc: Some("return-slot".to_string()),
                deterministic_addr: false,
            },
            None,
        );
    }

    if is_jump(m) {
        match insn.operands.first() {
            Some(op) if matches!(op.kind, OperandKind::Address | OperandKind::Code) => {
                return (InstructionClass::none(), None);
            }
            Some(op) => {
                return (
                    InstructionClass {
                        category: Category::IndirectTransfer,
                        access: None,
                        target_loc: Some(op.describe()),
                        deterministic_addr: false,
                    },
                    None,
                );
            }
            None => {
                return (
                    InstructionClass::none(),
                    Some(format!("jump at {:#x} has no operands", insn.addr)),
                );
            }
        }
    }

    // Stack pushes write and pops read, always at an rsp-relative slot.
    if m == "push" {
        return (
            InstructionClass {
                category: Category::MemoryAccess,
                access: Some(AccessKind::Write),
                target_loc: Some("(%rsp)".to_string()),
                deterministic_addr: true,
            },
            None,
        );
    }
    if m == "pop" || m == "leave" {
        return (
            InstructionClass {
                category: Category::MemoryAccess,
                access: Some(AccessKind::Read),
                target_loc: Some("(%rsp)".to_string()),
                deterministic_addr: true,
            },
            None,
        );
    }

    if IMPLICIT_WRITE_MNEMONICS.contains(&m) {
        let loc = mem_operand(insn).map(|(_, op)| op.describe()).unwrap_or_else(|| "(%rdi)".into());
        return (
            InstructionClass {
                category: Category::MemoryAccess,
                access: Some(AccessKind::Write),
                target_loc: Some(loc),
                deterministic_addr: false,
            },
            None,
        );
    }

    if MEMORY_MNEMONICS.contains(&m) {
        if let Some((idx, op)) = mem_operand(insn) {
            let writes = !READ_ONLY_MNEMONICS.contains(&m)
                && (m == "xchg" || idx + 1 == insn.operands.len());
            return (
                InstructionClass {
                    category: Category::MemoryAccess,
                    access: Some(if writes { AccessKind::Write } else { AccessKind::Read }),
                    target_loc: Some(op.describe()),
                    deterministic_addr: deterministic_mem(op),
                },
                None,
            );
        }
        return (InstructionClass::none(), None);
    }

    // Address computation and register-only arithmetic never touch memory.
    if matches!(m, "lea" | "nop" | "shl" | "shr" | "not" | "neg" | "imul" | "cdq") {
        return (InstructionClass::none(), None);
    }

    (
        InstructionClass::none(),
        Some(format!("unknown mnemonic `{}` at {:#x}", insn.mnemonic, insn.addr)),
    )
}
