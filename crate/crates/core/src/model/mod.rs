//! Shared data model: instruction IR, trace events, CFG, and the
//! compartment specification.
//!
//! Everything here is immutable after parse and safe to share across threads.

mod ir;
mod trace;
mod world;

pub use ir::{parse_ir, serialize_ir, Instruction, Operand, OperandKind};
pub use trace::{
    parse_trace, serialize_trace, AllocatorKind, EventKind, TraceEvent,
};
pub use world::{
    AddrRange, CompartmentSpec, ControlFlowGraph, InterfaceContract, LayoutRegion, RegionClass,
    TypeId, ValuePredicate,
};

use thiserror::Error;

/// Errors raised while parsing or validating model files.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("duplicate instruction address {addr:#x} (line {line})")]
    DuplicateAddr { addr: u64, line: usize },
    #[error("line {line}: tick {tick} does not increase (previous {prev})")]
    NonMonotoneTick { line: usize, tick: u64, prev: u64 },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
