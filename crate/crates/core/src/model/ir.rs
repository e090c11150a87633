//! Instruction IR: one JSON object per line (`.o2cir.jsonl`).
//!
//! The IR stands in for a disassembler: addresses are abstract unsigned
//! 64-bit integers, operands carry an already-decoded address expression, and
//! nothing here knows about real encodings.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Operand role as seen by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperandKind {
    /// Plain register operand.
    Register,
    /// Immediate constant.
    Immediate,
    /// Memory reference through an address expression.
    MemRef,
    /// Direct data address (known at analysis time).
    Address,
    /// Direct code address (known at analysis time).
    Code,
}

/// A single decoded operand.
///
/// `MemRef` uses `base + index * scale + disp`; direct `Address`/`Code`
/// operands and immediates carry their target in `value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    pub kind: OperandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disp: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
}

impl Operand {
    pub fn register(reg: &str) -> Self {
        Operand { kind: OperandKind::Register, reg: Some(reg.to_string()), ..Operand::empty() }
    }

    pub fn immediate(value: u64) -> Self {
        Operand { kind: OperandKind::Immediate, value: Some(value), ..Operand::empty() }
    }

    pub fn code(target: u64) -> Self {
        Operand { kind: OperandKind::Code, value: Some(target), ..Operand::empty() }
    }

    pub fn address(target: u64) -> Self {
        Operand { kind: OperandKind::Address, value: Some(target), ..Operand::empty() }
    }

    pub fn mem(base: Option<&str>, index: Option<&str>, scale: Option<u8>, disp: Option<i64>) -> Self {
        Operand {
            kind: OperandKind::MemRef,
            base: base.map(str::to_string),
            index: index.map(str::to_string),
            scale,
            disp,
            ..Operand::empty()
        }
    }

    fn empty() -> Self {
        Operand { kind: OperandKind::Immediate, reg: None, base: None, index: None, scale: None, disp: None, value: None }
    }

    /// Human-readable address expression, used as `target_loc` in probes.
    pub fn describe(&self) -> String {
        match self.kind {
            OperandKind::Register => self.reg.clone().unwrap_or_else(|| "?".into()),
            OperandKind::Immediate => format!("${}", self.value.unwrap_or(0)),
            OperandKind::Address | OperandKind::Code => format!("{:#x}", self.value.unwrap_or(0)),
            OperandKind::MemRef => {
                let mut s = String::new();
                if let Some(d) = self.disp {
                    if d < 0 {
                        s.push_str(&format!("-{:#x}", d.unsigned_abs()));
                    } else {
                        s.push_str(&format!("{:#x}", d));
                    }
                }
                s.push('(');
                if let Some(b) = &self.base {
                    s.push('%');
                    s.push_str(b);
                }
                if let Some(i) = &self.index {
                    s.push_str(&format!(",%{},{}", i, self.scale.unwrap_or(1)));
                }
                s.push(')');
                s
            }
        }
    }

    fn validate(&self, line: usize) -> Result<(), ModelError> {
        match self.kind {
            OperandKind::MemRef => {
                if self.base.is_none() && self.disp.is_none() {
                    return Err(ModelError::Schema {
                        line,
                        msg: "MemRef operand needs at least one of base/disp".into(),
                    });
                }
            }
            OperandKind::Address | OperandKind::Code => {
                if self.value.is_none() {
                    return Err(ModelError::Schema {
                        line,
                        msg: "Address/Code operand needs a concrete target value".into(),
                    });
                }
            }
            OperandKind::Register => {
                if self.reg.is_none() {
                    return Err(ModelError::Schema { line, msg: "Register operand needs reg".into() });
                }
            }
            OperandKind::Immediate => {}
        }
        Ok(())
    }
}

/// One machine instruction in the IR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    /// Code address; unique within a program.
    pub addr: u64,
    /// Enclosing function name.
    pub func: String,
    /// Byte offset within `func`.
    pub offset: u64,
    pub mnemonic: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operands: Vec<Operand>,
    /// Whether `addr` lies inside the compartment's code range. Advisory:
    /// the compartment spec's code ranges are authoritative.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_compartment: bool,
    /// Statically expected object types at this site (memory access and
    /// free sites), produced by whatever object analysis generated the IR.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type_hints: Vec<u64>,
}

impl Instruction {
    fn validate(&self, line: usize) -> Result<(), ModelError> {
        if self.operands.len() > 3 {
            return Err(ModelError::Schema {
                line,
                msg: format!("instruction has {} operands, at most 3 allowed", self.operands.len()),
            });
        }
        for op in &self.operands {
            op.validate(line)?;
        }
        Ok(())
    }
}

/// Parses JSON-lines instruction IR, returning instructions sorted by
/// address. Duplicate addresses are rejected.
pub fn parse_ir<R: BufRead>(reader: R) -> Result<Vec<Instruction>, ModelError> {
    let mut out: Vec<Instruction> = Vec::new();
    let mut lines_seen: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let insn: Instruction =
            serde_json::from_str(&line).map_err(|source| ModelError::Malformed { line: lineno, source })?;
        insn.validate(lineno)?;
        if lines_seen.insert(insn.addr, lineno).is_some() {
            return Err(ModelError::DuplicateAddr { addr: insn.addr, line: lineno });
        }
        out.push(insn);
    }
    out.sort_by_key(|i| i.addr);
    Ok(out)
}

/// Serializes instructions back to JSON lines (inverse of [`parse_ir`]).
pub fn serialize_ir(instructions: &[Instruction]) -> String {
    let mut s = String::new();
    for insn in instructions {
        s.push_str(&serde_json::to_string(insn).expect("instruction serializes"));
        s.push('\n');
    }
    s
}
