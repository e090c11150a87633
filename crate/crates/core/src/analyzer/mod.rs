//! Static analysis over the instruction IR: classification into enforcement
//! categories, plan construction, and the probe-reduction passes.

mod classify;
mod optimize;
mod plan;

pub use classify::{classify_instruction, AccessKind, Category, InstructionClass};
pub use optimize::{optimize_plan, reduction_report};
pub use plan::{
    build_plan, CheckKind, EnforcementPlan, PassStats, PlanError, ProbeSpec, ReductionStats,
};
