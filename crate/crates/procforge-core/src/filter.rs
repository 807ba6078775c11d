//! Candidate filters for the enhancement loop and the per-round manifest.
//!
//! RFT keeps what compiled; the verifier filter keeps what the scorer
//! predicts will compile (no compilation needed — that is its time saving);
//! the combined filter keeps the intersection.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::label::Label;
use crate::repl::{CompilationResult, CompileStatus};
use crate::verifier::VerifierScore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPolicy {
    Rft,
    Verifier,
    RftAndVerifier,
}

impl fmt::Display for FilterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterPolicy::Rft => "rft",
            FilterPolicy::Verifier => "verifier",
            FilterPolicy::RftAndVerifier => "rft_and_verifier",
        })
    }
}

impl core::str::FromStr for FilterPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rft" => Ok(FilterPolicy::Rft),
            "verifier" => Ok(FilterPolicy::Verifier),
            "both" | "rft_and_verifier" => Ok(FilterPolicy::RftAndVerifier),
            other => Err(alloc::format!("unknown filter policy '{other}'")),
        }
    }
}

/// Ids of candidates that compiled, in result order.
pub fn filter_rft(results: &[CompilationResult]) -> Vec<String> {
    results
        .iter()
        .filter(|r| r.status == CompileStatus::Success)
        .map(|r| r.candidate_id.clone())
        .collect()
}

/// Ids the verifier predicts correct, in score order.
pub fn filter_verifier(scores: &[VerifierScore]) -> Vec<String> {
    scores
        .iter()
        .filter(|s| s.predicted_label == Label::Correct)
        .map(|s| s.candidate_id.clone())
        .collect()
}

/// Ids that both compiled and were predicted correct, in result order.
pub fn filter_both(results: &[CompilationResult], scores: &[VerifierScore]) -> Vec<String> {
    let predicted: BTreeSet<&str> = scores
        .iter()
        .filter(|s| s.predicted_label == Label::Correct)
        .map(|s| s.candidate_id.as_str())
        .collect();
    results
        .iter()
        .filter(|r| r.status == CompileStatus::Success && predicted.contains(r.candidate_id.as_str()))
        .map(|r| r.candidate_id.clone())
        .collect()
}

/// Fraction of selected candidates that compiled — the quality column of a
/// round manifest. `None` when nothing was selected.
pub fn dataset_quality(selected: &[String], results: &[CompilationResult]) -> Option<f64> {
    if selected.is_empty() {
        return None;
    }
    let success: BTreeSet<&str> = results
        .iter()
        .filter(|r| r.status == CompileStatus::Success)
        .map(|r| r.candidate_id.as_str())
        .collect();
    let hits = selected
        .iter()
        .filter(|id| success.contains(id.as_str()))
        .count();
    Some(hits as f64 / selected.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCounts {
    pub generated: usize,
    pub compiled_success: usize,
    pub selected_rft: usize,
    pub selected_verifier: usize,
    pub selected_both: usize,
}

/// Written once per completed loop round; re-running a round with the same
/// inputs is a no-op keyed on `input_hash`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub round: u32,
    pub workspace: String,
    pub policy: FilterPolicy,
    pub counts: RoundCounts,
    pub dataset_quality: Option<f64>,
    pub input_hash: String,
    pub created_at_ms: u64,
}

impl RoundManifest {
    /// Cross-count sanity: the intersection can never exceed either side.
    pub fn counts_consistent(&self) -> bool {
        self.counts.selected_both <= self.counts.selected_rft.min(self.counts.selected_verifier)
    }
}
