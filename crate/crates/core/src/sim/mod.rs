//! Deterministic discrete-event simulation of mobile clients.
//!
//! Every random draw comes from [`SimRng`], a PCG32 generator (64-bit LCG
//! state, XSH-RR output) with a separate stream per concern, so one run is a
//! pure function of its [`SimConfig`].

pub mod config;
pub mod engine;
pub mod queue;
pub mod rng;
pub mod workload;

pub use config::{parse_kv_lines, DelayRange, ProtocolKind, SimConfig, CONFIG_KEYS};
pub use engine::{run_simulation, SimOutcome, TxnTiming};
pub use queue::EventQueue;
pub use rng::SimRng;
pub use workload::{gen_workload, TxnSpec};
