//! Lean 4 autoformalization feedback harness.
//!
//! This crate carries everything that touches the outside world: compiler
//! backends (a pooled Lean REPL child process and a deterministic mock),
//! generation and scorer transports, JSONL file formats, the enhancement
//! loop driver, and the CLI. The algorithmic substance lives in
//! `procforge-core` and is re-exported here for convenience.

pub mod backend;
pub mod cli;
pub mod gateway;
pub mod jsonl;
pub mod logx;
pub mod loop_driver;
pub mod mock_server;
pub mod scorer;

pub use procforge_core as core;
