//! Deterministic building blocks for a Lean 4 autoformalization feedback
//! pipeline.
//!
//! Everything in this crate is pure over its inputs: theorem extraction from
//! Lean source text, corpus curation and splitting, prompt construction, REPL
//! reply parsing and result classification, proof segmentation with
//! first-error step labeling, verifier losses and candidate selection, and
//! evaluation metrics. IO, process management, and transport live in the
//! companion `procforge` crate.
//!
//! The crate is `no_std` (with `alloc`) so the same logic can run anywhere a
//! heap exists; determinism is part of the contract — identical inputs and
//! seeds produce identical outputs, bit for bit.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod filter;
pub mod gateway;
pub mod hash;
pub mod label;
pub mod metrics;
pub mod repl;
pub mod rng;
mod scan;
pub mod verifier;

pub use corpus::{ParallelRecord, SplitManifest, SplitName, TheoremRecord};
pub use gateway::Candidate;
pub use label::{Label, LabelScheme, LabeledCandidate, ProofStep, StepLabels};
pub use repl::{CompilationResult, CompileJob, CompileStatus, Diagnostic, Severity};
pub use verifier::VerifierScore;
