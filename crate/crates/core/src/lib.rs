//! Desk-scale kernel compartmentalization pipeline.
//!
//! The crate replays portable instruction-IR and memory-trace files through a
//! software-fault-isolation enforcement engine instead of attaching to a live
//! kernel. It is organized around the stages of that pipeline:
//!
//! - [`model`] — the instruction IR, trace events, control-flow graph, and
//!   compartment specification shared by everything else.
//! - [`analyzer`] — classifies compartment instructions, builds an enforcement
//!   plan, and runs the probe-reduction optimization passes.
//! - [`enforce`] — replays a trace against a plan, modeling private stack and
//!   heap, CFI targets, data-integrity checks, and interface authorization.
//! - [`dtree`] — integer-only decision trees for auditing untracked objects:
//!   quad-word feature extraction, CART training, five-array flattening,
//!   floor quantization, and budget-constrained evaluation.
//! - [`profiler`] — builds labeled datasets from traces (type at allocation,
//!   content at free).
//! - [`scenario`] — deterministic workload and attack-trace generation.

pub mod analyzer;
pub mod dtree;
pub mod enforce;
pub mod model;
pub mod profiler;
pub mod rng;
pub mod scenario;
