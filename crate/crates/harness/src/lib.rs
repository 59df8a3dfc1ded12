//! Experiment harness: scenario files, end-to-end runs, parameter sweeps,
//! reference oracles, and deterministic metrics output.

pub mod metrics;
pub mod oracle;
pub mod run;
pub mod scenario;
pub mod seeds;
pub mod sweep;

pub use run::{run, RunReport};
pub use scenario::{deadline_tier_ms, derive_deadline_ms, ScenarioConfig, ScenarioError};
