//! Core library for simulating a chain of smart roadside nodes: finite-field
//! coding for the inter-node backbone and the vehicle downlink, a
//! deterministic discrete-event network model, and the two-tier task
//! management layer (cluster dispatch plus per-node opportunistic
//! scheduling).
//!
//! Everything stochastic takes an explicit seed and replays exactly.

pub mod bats;
pub mod dispatch;
pub mod ecc;
pub mod galois;
pub mod i2v;
pub mod netsim;
pub mod sched;

pub use galois::{Gf256, Matrix};
pub use netsim::{NodeId, SimTime};
