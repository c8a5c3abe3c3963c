//! The guide's chapters, included as doc comments so `cargo test` compiles
//! and runs every Rust listing in `book/src`. One module per chapter keeps
//! failures traceable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/relative-timestamps.md")]
pub mod relative_timestamps {}
#[doc = include_str!("../../../book/src/commit-validation.md")]
pub mod commit_validation {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
