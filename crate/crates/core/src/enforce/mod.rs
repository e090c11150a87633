//! Trace replay under an enforcement plan: CFI, private stack/heap with
//! slab/buddy/vmalloc models, data-integrity type checks, subject
//! switching, interface authorization, and the three-phase machine.

mod engine;
mod store;
mod verdict;

pub use engine::{Engine, EngineError, Phase, ReplayConfig, ReplayOutcome};
pub use store::{CacheHandle, MapStore, ObjectRecord, SlotState, StackRegion, Subject};
pub use verdict::{parse_verdicts, serialize_verdicts, Decision, Verdict, ViolationReason};
