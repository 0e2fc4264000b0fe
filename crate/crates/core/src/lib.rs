//! Deterministic tournament engine and analysis toolkit for
//! long-horizon repeated social dilemmas among memory-bounded agents:
//! four games, bounded/asymmetric/sanitized history windows, scripted
//! and LLM-backed agents, cooperation/reward metrics, reasoning-trace
//! lexical analysis, and a training-data curation pipeline.

pub mod agents;
pub mod curation;
pub mod engine;
pub mod error;
pub mod games;
pub mod harness;
pub mod lexalysis;
pub mod llm_client;
pub mod memory;
pub mod metrics;

pub use error::{Error, Result};
