//! Verifier-side scoring: step-probability aggregation, the two training
//! losses, and best-candidate selection.
//!
//! A step scorer (remote model or the local toy model) produces one
//! probability of correctness per proof step. Sample-level aggregation
//! defaults to the minimum over steps — a chain verifies iff every step does
//! — with product and last-step reductions available since the sample-level
//! notion is a modeling choice.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::label::{Label, LabelScheme, StepLabels};

/// Probabilities are clamped into `[ε, 1-ε]` so cross-entropies stay finite.
pub const PROB_EPSILON: f64 = 1e-7;

/// Threshold for calling a sample "correct".
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn clamp_prob(p: f64) -> f64 {
    p.max(PROB_EPSILON).min(1.0 - PROB_EPSILON)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Min,
    Product,
    Last,
}

impl Aggregation {
    /// Reduce per-step probabilities to a sample score. No steps means
    /// nothing verified; that scores ε, not 1.
    pub fn reduce(&self, probs: &[f64]) -> f64 {
        if probs.is_empty() {
            return PROB_EPSILON;
        }
        match self {
            Aggregation::Min => probs.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Product => probs.iter().product(),
            Aggregation::Last => *probs.last().expect("non-empty"),
        }
    }
}

impl core::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Aggregation::Min),
            "product" => Ok(Aggregation::Product),
            "last" => Ok(Aggregation::Last),
            other => Err(alloc::format!("unknown aggregation '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierScore {
    pub candidate_id: String,
    pub step_probs: Vec<f64>,
    pub sample_score: f64,
    pub predicted_label: Label,
}

impl VerifierScore {
    /// Clamp raw step probabilities, aggregate, and threshold.
    pub fn from_step_probs(candidate_id: String, raw: Vec<f64>, agg: Aggregation) -> Self {
        let step_probs: Vec<f64> = raw.into_iter().map(clamp_prob).collect();
        let sample_score = agg.reduce(&step_probs);
        let predicted_label = if sample_score >= DECISION_THRESHOLD {
            Label::Correct
        } else {
            Label::Incorrect
        };
        VerifierScore {
            candidate_id,
            step_probs,
            sample_score,
            predicted_label,
        }
    }
}

/// Tactic words the toy scorer recognizes. Deliberately excludes `sorry`.
pub const TOY_TACTIC_WHITELIST: &[&str] = &[
    "by", "rw", "rwa", "simp", "simp_all", "simp_rw", "dsimp", "exact", "exact_mod_cast",
    "apply", "intro", "intros", "rfl", "ring", "ring_nf", "norm_num", "norm_cast", "push_cast",
    "linarith", "nlinarith", "positivity", "omega", "decide", "constructor", "rcases", "cases",
    "obtain", "induction", "ext", "funext", "congr", "use", "refine", "have", "show", "calc",
    "unfold", "change", "trivial", "assumption", "aesop", "tauto", "field_simp", "push_neg",
    "gcongr", "let", "fun", "at", "with", "this", "h",
];

const TOY_BIAS: f64 = 3.0;
const TOY_LENGTH_WEIGHT: f64 = -0.02;
const TOY_UNKNOWN_WEIGHT: f64 = -0.9;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Reference local step scorer: a fixed logistic over step length in chars
/// and the count of word-like tokens outside the tactic whitelist. Exists so
/// the whole pipeline runs offline with varied, reproducible scores; it is
/// not a trained model.
pub fn toy_step_prob(step: &str) -> f64 {
    let len = step.chars().count() as f64;
    let mut unknown = 0usize;
    let mut token = String::new();
    let flush = |token: &mut String, unknown: &mut usize| {
        if !token.is_empty() {
            let word_like = token
                .chars()
                .next()
                .map(|c| c.is_alphabetic() || c == '_')
                .unwrap_or(false);
            if word_like && !TOY_TACTIC_WHITELIST.contains(&token.as_str()) {
                *unknown += 1;
            }
            token.clear();
        }
    };
    for c in step.chars() {
        if c.is_alphanumeric() || c == '_' || c == '\'' {
            token.push(c);
        } else {
            flush(&mut token, &mut unknown);
        }
    }
    flush(&mut token, &mut unknown);
    sigmoid(TOY_BIAS + TOY_LENGTH_WEIGHT * len + TOY_UNKNOWN_WEIGHT * unknown as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossScheme {
    #[serde(rename = "OSV")]
    Osv,
    #[serde(rename = "PSV")]
    Psv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub scheme: LossScheme,
    /// Mean of `per_sample`; non-negative.
    pub value: f64,
    pub n: usize,
    pub per_sample: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LossError {
    ShapeMismatch {
        candidate_id: String,
        steps: usize,
        probs: usize,
    },
    SchemeMismatch {
        candidate_id: String,
        expected: LabelScheme,
    },
    MissingLabels {
        candidate_id: String,
    },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::ShapeMismatch {
                candidate_id,
                steps,
                probs,
            } => write!(
                f,
                "candidate {candidate_id}: {steps} step labels vs {probs} step probabilities"
            ),
            LossError::SchemeMismatch {
                candidate_id,
                expected,
            } => write!(f, "candidate {candidate_id}: labels are not scheme {expected}"),
            LossError::MissingLabels { candidate_id } => {
                write!(f, "candidate {candidate_id}: no labels supplied")
            }
        }
    }
}

impl core::error::Error for LossError {}

/// Mean step cross-entropy for one sample. Shared by both losses so that
/// they are bit-identical whenever the label vectors are identical.
fn sample_cross_entropy_mean(probs: &[f64], labels: &[Label]) -> f64 {
    debug_assert_eq!(probs.len(), labels.len());
    let m = probs.len();
    if m == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (p, label) in probs.iter().zip(labels) {
        let r = clamp_prob(*p);
        let y = match label {
            Label::Correct => 1.0,
            Label::Incorrect => 0.0,
        };
        acc += -(y * libm::log(r) + (1.0 - y) * libm::log(1.0 - r));
    }
    acc / m as f64
}

fn loss_impl(
    scheme: LossScheme,
    expected: LabelScheme,
    scores: &[VerifierScore],
    labels: &[StepLabels],
) -> Result<LossReport, LossError> {
    let by_id: BTreeMap<&str, &StepLabels> = labels
        .iter()
        .map(|l| (l.candidate_id.as_str(), l))
        .collect();
    let mut per_sample = Vec::with_capacity(scores.len());
    for score in scores {
        let labels = by_id
            .get(score.candidate_id.as_str())
            .ok_or_else(|| LossError::MissingLabels {
                candidate_id: score.candidate_id.clone(),
            })?;
        if labels.scheme != expected {
            return Err(LossError::SchemeMismatch {
                candidate_id: score.candidate_id.clone(),
                expected,
            });
        }
        if labels.labels.len() != score.step_probs.len() {
            return Err(LossError::ShapeMismatch {
                candidate_id: score.candidate_id.clone(),
                steps: labels.labels.len(),
                probs: score.step_probs.len(),
            });
        }
        per_sample.push(sample_cross_entropy_mean(&score.step_probs, &labels.labels));
    }
    let n = per_sample.len();
    let value = if n == 0 {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / n as f64
    };
    Ok(LossReport {
        scheme,
        value,
        n,
        per_sample,
    })
}

/// Outcome-supervised loss: mean over samples of the mean step
/// cross-entropy against each sample's uniform outcome label.
pub fn loss_osv(
    scores: &[VerifierScore],
    labels: &[StepLabels],
) -> Result<LossReport, LossError> {
    loss_impl(LossScheme::Osv, LabelScheme::Outcome, scores, labels)
}

/// Process-supervised loss: same shape, per-step first-error labels.
pub fn loss_psv(
    scores: &[VerifierScore],
    labels: &[StepLabels],
) -> Result<LossReport, LossError> {
    loss_impl(LossScheme::Psv, LabelScheme::Process, scores, labels)
}

/// Closed-form partial derivative of the loss w.r.t. one step probability,
/// for gradient checks: `-(y/r - (1-y)/(1-r)) / (n * m_i)`.
pub fn loss_grad_wrt_step_prob(n: usize, m_i: usize, prob: f64, label: Label) -> f64 {
    let r = clamp_prob(prob);
    let y = match label {
        Label::Correct => 1.0,
        Label::Incorrect => 0.0,
    };
    -(y / r - (1.0 - y) / (1.0 - r)) / (n as f64 * m_i as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mp1Selection {
    pub candidate_id: String,
    /// Set when no candidate was predicted correct and the global best was
    /// chosen instead.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SelectError {
    EmptyCandidateSet,
}

impl fmt::Display for SelectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("cannot select from an empty candidate set")
    }
}

impl core::error::Error for SelectError {}

fn best_by_score<'a, I: Iterator<Item = &'a VerifierScore>>(iter: I) -> Option<&'a VerifierScore> {
    iter.reduce(|best, s| {
        if s.sample_score > best.sample_score
            || (s.sample_score == best.sample_score && s.candidate_id < best.candidate_id)
        {
            s
        } else {
            best
        }
    })
}

/// Multiple-choice selection: highest sample score among candidates
/// predicted correct, ties broken by lowest candidate id. Falls back to the
/// global best (flagged) when nothing is predicted correct.
pub fn select_mp1(scores: &[VerifierScore]) -> Result<Mp1Selection, SelectError> {
    if scores.is_empty() {
        return Err(SelectError::EmptyCandidateSet);
    }
    let correct = best_by_score(
        scores
            .iter()
            .filter(|s| s.predicted_label == Label::Correct),
    );
    match correct {
        Some(winner) => Ok(Mp1Selection {
            candidate_id: winner.candidate_id.clone(),
            fallback: false,
        }),
        None => {
            let winner = best_by_score(scores.iter()).expect("non-empty");
            Ok(Mp1Selection {
                candidate_id: winner.candidate_id.clone(),
                fallback: true,
            })
        }
    }
}
