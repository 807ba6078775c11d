//! Proof segmentation and per-step labeling from compiler feedback.
//!
//! A candidate body is cut into tactic steps (lines and top-level `;` inside
//! the first `by` block; a term-mode proof is one step). Labels follow the
//! first-error-location rule: steps that end before the first error line are
//! correct, the step owning that line and everything after it are incorrect.
//! The outcome scheme labels every step with the final compile result.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::repl::{is_sorry_warning, CompilationResult, CompileStatus, Severity};
use crate::scan::{self, CharClass};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    /// 0-based step position; redundant with list order, so not serialized.
    #[serde(skip)]
    pub index: usize,
    pub text: String,
    /// 1-based line span within the candidate body.
    pub line_start: u32,
    pub line_end: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    Process,
    Outcome,
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelScheme::Process => "process",
            LabelScheme::Outcome => "outcome",
        })
    }
}

/// The two label tokens the verifier is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Correct,
    Incorrect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabels {
    pub candidate_id: String,
    pub scheme: LabelScheme,
    pub labels: Vec<Label>,
    pub first_error_step: Option<usize>,
}

impl StepLabels {
    pub fn all_correct(&self) -> bool {
        self.labels.iter().all(|&l| l == Label::Correct)
    }
}

/// The training artifact row: labels together with the segmented steps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCandidate {
    pub candidate_id: String,
    pub scheme: LabelScheme,
    pub steps: Vec<ProofStep>,
    pub labels: Vec<Label>,
    pub first_error_step: Option<usize>,
}

impl LabeledCandidate {
    pub fn new(steps: Vec<ProofStep>, labels: StepLabels) -> Self {
        debug_assert_eq!(steps.len(), labels.labels.len());
        LabeledCandidate {
            candidate_id: labels.candidate_id,
            scheme: labels.scheme,
            steps,
            labels: labels.labels,
            first_error_step: labels.first_error_step,
        }
    }

    /// Restore step indices after deserialization.
    pub fn refresh_indices(&mut self) {
        for (i, step) in self.steps.iter_mut().enumerate() {
            step.index = i;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelError {
    /// Timeouts and backend errors have no first detected error; such
    /// candidates are excluded from process-supervised data.
    UnlabelableResult { status: CompileStatus },
}

impl fmt::Display for LabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelError::UnlabelableResult { status } => {
                write!(f, "result with status {status} cannot be step-labeled")
            }
        }
    }
}

impl core::error::Error for LabelError {}

/// Locate the first `sorry` token in a body — word-boundary match, outside
/// comments and strings. Returns its (1-based line, 0-based column).
pub fn find_sorry_token(body: &str) -> Option<(u32, u32)> {
    let scanned = scan::scan(body);
    let hit = scanned
        .code_tokens(body)
        .find(|(_, text)| *text == "sorry")?;
    let (tok, _) = hit;
    let line = scanned.line[tok.char_idx];
    let line_start_byte = body[..tok.start].rfind('\n').map(|i| i + 1).unwrap_or(0);
    let column = body[line_start_byte..tok.start].chars().count() as u32;
    Some((line, column))
}

fn line_of_byte(line: &[u32], chars: &[(usize, char)], byte: usize) -> u32 {
    match chars.binary_search_by(|&(b, _)| b.cmp(&byte)) {
        Ok(i) => line[i],
        Err(0) => 1,
        Err(i) => line[i - 1],
    }
}

/// Cut a candidate body into proof steps.
///
/// Inside the first top-level `by` block, steps split at newlines and `;`
/// occurring at bracket depth 0 outside strings and comments; `<;>` does not
/// split. Without a top-level `by`, the whole body is a single term-mode
/// step. Degenerate input yields a single step rather than an error.
pub fn segment_proof(body: &str) -> Vec<ProofStep> {
    let scanned = scan::scan(body);

    let by_token = scanned
        .code_tokens(body)
        .find(|(tok, text)| *text == "by" && scanned.depth[tok.char_idx] == 0);

    let region_start = match (&by_token, scanned.balanced) {
        (Some((tok, _)), true) => tok.end,
        _ => return vec![whole_body_step(body, &scanned)],
    };

    let mut boundaries: Vec<(usize, usize)> = Vec::new(); // (cut byte, separator len)
    for (i, &(byte, c)) in scanned.chars.iter().enumerate() {
        if byte < region_start || scanned.class[i] != CharClass::Code {
            continue;
        }
        if scanned.depth[i] != 0 {
            continue;
        }
        match c {
            '\n' => boundaries.push((byte, 1)),
            ';' => {
                let prev = byte.checked_sub(1).map(|b| body.as_bytes()[b]);
                let next = body.as_bytes().get(byte + 1).copied();
                let combinator = prev == Some(b'<') && next == Some(b'>');
                if !combinator {
                    boundaries.push((byte, 1));
                }
            }
            _ => {}
        }
    }

    let mut steps = Vec::new();
    let mut seg_start = region_start;
    let push_segment = |seg_start: usize, seg_end: usize, steps: &mut Vec<ProofStep>| {
        if seg_end <= seg_start {
            return;
        }
        if let Some(step) = segment_to_step(body, &scanned, seg_start, seg_end, steps.len()) {
            steps.push(step);
        }
    };
    for &(cut, sep) in &boundaries {
        push_segment(seg_start, cut, &mut steps);
        seg_start = cut + sep;
    }
    push_segment(seg_start, body.len(), &mut steps);

    if steps.is_empty() {
        return vec![whole_body_step(body, &scanned)];
    }
    steps
}

fn whole_body_step(body: &str, scanned: &scan::Scanned) -> ProofStep {
    segment_to_step(body, scanned, 0, body.len(), 0).unwrap_or(ProofStep {
        index: 0,
        text: body.trim().to_string(),
        line_start: 1,
        line_end: 1,
    })
}

fn segment_to_step(
    body: &str,
    scanned: &scan::Scanned,
    start: usize,
    end: usize,
    index: usize,
) -> Option<ProofStep> {
    let slice = &body[start..end];
    // A step must carry code; whitespace- or comment-only segments are not
    // tactics.
    let has_code = scanned
        .chars
        .iter()
        .enumerate()
        .any(|(i, &(b, c))| {
            b >= start && b < end && scanned.class[i] == CharClass::Code && !c.is_whitespace()
        });
    if !has_code {
        return None;
    }
    let trimmed = slice.trim();
    let lead = slice.len() - slice.trim_start().len();
    let first_byte = start + lead;
    let last_byte = start + slice.trim_end().len().saturating_sub(1);
    Some(ProofStep {
        index,
        text: trimmed.to_string(),
        line_start: line_of_byte(&scanned.line, &scanned.chars, first_byte),
        line_end: line_of_byte(&scanned.line, &scanned.chars, last_byte),
    })
}

fn first_error_line(result: &CompilationResult) -> Option<u32> {
    result
        .diagnostics
        .iter()
        .filter(|d| d.severity == Severity::Error || is_sorry_warning(d))
        .map(|d| (d.line, d.column))
        .min()
        .map(|(line, _)| line)
}

/// First-error-location labels. Diagnostics must already be in candidate
/// body coordinates (see [`CompilationResult::into_body_coordinates`]).
pub fn label_process(
    steps: &[ProofStep],
    result: &CompilationResult,
) -> Result<StepLabels, LabelError> {
    let first_incorrect = match result.status {
        CompileStatus::Success => None,
        CompileStatus::Failed => {
            let e = first_error_line(result).unwrap_or(1);
            let owning = steps.iter().position(|s| s.line_end >= e);
            // An error past the last step still failed the proof; charge the
            // final step so the labels stay consistent with the outcome.
            Some(owning.unwrap_or(steps.len().saturating_sub(1)))
        }
        status => return Err(LabelError::UnlabelableResult { status }),
    };
    let labels = steps
        .iter()
        .enumerate()
        .map(|(i, _)| match first_incorrect {
            Some(fe) if i >= fe => Label::Incorrect,
            _ => Label::Correct,
        })
        .collect();
    Ok(StepLabels {
        candidate_id: result.candidate_id.clone(),
        scheme: LabelScheme::Process,
        labels,
        first_error_step: if steps.is_empty() { None } else { first_incorrect },
    })
}

/// Uniform labels from the final compilation outcome.
pub fn label_outcome(
    steps: &[ProofStep],
    result: &CompilationResult,
) -> Result<StepLabels, LabelError> {
    let label = match result.status {
        CompileStatus::Success => Label::Correct,
        CompileStatus::Failed => Label::Incorrect,
        status => return Err(LabelError::UnlabelableResult { status }),
    };
    Ok(StepLabels {
        candidate_id: result.candidate_id.clone(),
        scheme: LabelScheme::Outcome,
        labels: vec![label; steps.len()],
        first_error_step: None,
    })
}
