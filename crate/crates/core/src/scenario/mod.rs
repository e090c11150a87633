//! Deterministic workload and attack-trace generation.
//!
//! Every scenario is a self-consistent bundle of IR, CFG, compartment spec,
//! and trace, plus the exact Deny/Audit verdicts a replay is expected to
//! produce. A seed fully determines the emitted bytes.

mod generate;
mod world;

pub use generate::{
    generate, generate_training_world, ExpectedVerdict, Scenario, ScenarioBundle, ScenarioKind,
    ScenarioParams,
};
pub use world::{
    palette_type, type_palette, world_cfg, world_ir, world_spec, TypePattern, WorldAddrs,
    TYPE_CO_OWNED, TYPE_KERNEL_K, TYPE_KERNEL_U, TYPE_KERNEL_V, TYPE_OWNED_A, TYPE_OWNED_B,
    TYPE_PAGES,
};
