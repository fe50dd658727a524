//! feedbench-core: a harness for measuring whether LLM systems with memory
//! actually improve from user feedback.
//!
//! The pipeline: a [`tasks`] partition supplies train/test cases, the
//! [`simulator`] turns training cases into multi-turn feedback sessions
//! (satisfaction scores plus like/dislike/copy actions from the calibrated
//! [`action`] model), [`memory`] systems ingest those sessions and answer
//! test queries through the [`gateway`], and [`eval`] scores and normalizes
//! the results. [`runner`] wires the phases into reproducible protocols.

pub mod action;
pub mod eval;
pub mod fixtures;
pub mod gateway;
pub mod memory;
pub mod runner;
pub mod simulator;
pub mod tasks;
pub mod text;
pub mod types;

pub use types::{Domain, TaskFormat};
