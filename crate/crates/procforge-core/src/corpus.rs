//! Theorem corpus construction: extraction from Lean 4 sources, curation
//! filters, dataset splits, and informalization prompt handling.
//!
//! Extraction is lexical — line and bracket scanning, not elaboration. The
//! goal is byte fidelity of statement and proof text plus a usable
//! environment preamble; whether the result actually compiles is the
//! compiler backend's verdict downstream.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::scan::{self, CharClass};

/// One extracted `theorem`/`lemma` declaration with its environment preamble.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub id: String,
    pub source_path: String,
    /// `import`/`open`/`namespace`/`variable`/`set_option` lines lexically
    /// preceding the declaration, joined with newlines.
    pub env: String,
    /// From the `theorem`/`lemma` keyword through `:=` exclusive.
    pub statement: String,
    /// Everything after `:=`, `#align` lines retained verbatim.
    pub proof: String,
    #[serde(skip)]
    pub char_count_formal: usize,
}

impl TheoremRecord {
    pub fn new(
        id: String,
        source_path: String,
        env: String,
        statement: String,
        proof: String,
    ) -> Self {
        let char_count_formal = statement.chars().count() + proof.chars().count();
        TheoremRecord {
            id,
            source_path,
            env,
            statement,
            proof,
            char_count_formal,
        }
    }

    /// Recompute derived counts, e.g. after deserialization.
    pub fn refresh_counts(&mut self) {
        self.char_count_formal = self.statement.chars().count() + self.proof.chars().count();
    }

    /// The full theorem text as submitted for compilation.
    pub fn formal_text(&self) -> String {
        format!("{} := {}", self.statement, self.proof)
    }
}

/// A theorem paired with its natural-language question and answer.
///
/// Serializes flat, so the JSONL schema is exactly
/// `id, source_path, env, statement, proof, nl_question, nl_answer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelRecord {
    #[serde(flatten)]
    pub theorem: TheoremRecord,
    pub nl_question: String,
    pub nl_answer: String,
    #[serde(skip)]
    pub char_count_nl: usize,
}

impl ParallelRecord {
    pub fn new(theorem: TheoremRecord, nl_question: String, nl_answer: String) -> Self {
        let char_count_nl = nl_question.chars().count() + nl_answer.chars().count();
        ParallelRecord {
            theorem,
            nl_question,
            nl_answer,
            char_count_nl,
        }
    }

    pub fn refresh_counts(&mut self) {
        self.theorem.refresh_counts();
        self.char_count_nl = self.nl_question.chars().count() + self.nl_answer.chars().count();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Training,
    RandomTest,
    BasicTest,
    RealTest,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitName::Training => "training",
            SplitName::RandomTest => "random_test",
            SplitName::BasicTest => "basic_test",
            SplitName::RealTest => "real_test",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split_name: SplitName,
    pub ids: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractError {
    /// Bracket depth never returned to zero (or a comment/string was left
    /// open); nothing trustworthy can be extracted.
    UnbalancedSource { line: u32 },
}

impl fmt::Display for ExtractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractError::UnbalancedSource { line } => {
                write!(f, "unbalanced source near line {line}")
            }
        }
    }
}

impl core::error::Error for ExtractError {}

const ENV_KEYWORDS: [&str; 5] = ["import", "open", "namespace", "variable", "set_option"];
const DECL_KEYWORDS: [&str; 2] = ["theorem", "lemma"];

struct LineView {
    start: usize,
    end: usize,
    depth_at_start: i32,
    /// Byte offset of the first code-class, non-whitespace char, if any.
    code_start: Option<usize>,
    /// Whether that first code char sits at column 0.
    code_at_col0: bool,
}

fn line_views(source: &str, scanned: &scan::Scanned) -> Vec<LineView> {
    let mut lines = Vec::new();
    let mut start = 0usize;
    let mut depth_at_start = 0i32;
    let mut code_start: Option<usize> = None;
    let mut code_at_col0 = false;
    let mut line_begun = false;

    for (idx, &(byte, c)) in scanned.chars.iter().enumerate() {
        if !line_begun {
            depth_at_start = scanned.depth[idx];
            line_begun = true;
        }
        if c == '\n' {
            lines.push(LineView {
                start,
                end: byte,
                depth_at_start,
                code_start,
                code_at_col0,
            });
            start = byte + 1;
            code_start = None;
            code_at_col0 = false;
            line_begun = false;
            continue;
        }
        if code_start.is_none() && scanned.class[idx] == CharClass::Code && !c.is_whitespace() {
            code_start = Some(byte);
            code_at_col0 = byte == start;
        }
    }
    if start <= source.len() {
        lines.push(LineView {
            start,
            end: source.len(),
            depth_at_start,
            code_start,
            code_at_col0,
        });
    }
    lines
}

fn first_token_of(source: &str, byte: usize) -> &str {
    let rest = &source[byte..];
    let end = rest
        .char_indices()
        .find(|&(_, c)| !scan::is_ident_char(c) && c != '#' && c != '@')
        .map(|(i, _)| i)
        .unwrap_or(rest.len());
    &rest[..end]
}

/// Extract every top-level `theorem`/`lemma` declaration from a Lean 4
/// source text. An empty file (or one without such declarations) yields an
/// empty list, not an error.
pub fn extract_theorems(source: &str, path: &str) -> Result<Vec<TheoremRecord>, ExtractError> {
    let scanned = scan::scan(source);
    if !scanned.balanced {
        return Err(ExtractError::UnbalancedSource {
            line: scanned.imbalance_line,
        });
    }
    let lines = line_views(source, &scanned);

    // Declaration headers: `theorem`/`lemma` keyword tokens at bracket depth 0.
    let mut headers: Vec<scan::CodeToken> = Vec::new();
    for (tok, text) in scanned.code_tokens(source) {
        if scanned.depth[tok.char_idx] == 0 && DECL_KEYWORDS.contains(&text) {
            headers.push(tok);
        }
    }

    let line_of_byte = |byte: usize| lines.partition_point(|l| l.end < byte);

    let mut records = Vec::new();
    for (ordinal, header) in headers.iter().enumerate() {
        let bound = headers
            .get(ordinal + 1)
            .map(|h| h.start)
            .unwrap_or(source.len());

        // First `:=` at depth 0 after the header, in code class.
        let mut assign: Option<usize> = None;
        for (idx, &(byte, c)) in scanned.chars.iter().enumerate() {
            if byte < header.start || byte >= bound {
                continue;
            }
            if c == ':'
                && scanned.class[idx] == CharClass::Code
                && scanned.depth[idx] == 0
                && scanned.chars.get(idx + 1).map(|&(_, c)| c) == Some('=')
                && scanned.class.get(idx + 1) == Some(&CharClass::Code)
            {
                assign = Some(byte);
                break;
            }
        }
        let Some(assign) = assign else {
            continue; // statement-only declaration, no proof to extract
        };

        let statement = source[header.start..assign].trim_end().to_string();
        let proof_begin = assign + 2;

        // Proof runs until the next column-0 code line that is not `#align`,
        // or until the next declaration header, whichever comes first.
        let header_line = line_of_byte(header.start);
        let mut proof_end = bound;
        for lv in lines.iter().skip(header_line + 1) {
            if lv.start >= bound {
                break;
            }
            if lv.start <= proof_begin {
                continue;
            }
            if let Some(cs) = lv.code_start {
                if lv.depth_at_start == 0 && lv.code_at_col0 {
                    let tok = first_token_of(source, cs);
                    if tok != "#align" {
                        proof_end = lv.start;
                        break;
                    }
                }
            }
        }
        if proof_end <= proof_begin {
            continue;
        }

        // Trim the slice back to its last code-bearing line so trailing
        // blanks, comments, and the next declaration's attributes drop out.
        let mut last_code_end: Option<usize> = None;
        for lv in &lines {
            if lv.start >= proof_end {
                break;
            }
            if lv.end <= proof_begin {
                continue;
            }
            if lv.code_start.is_some() {
                last_code_end = Some(lv.end.min(proof_end));
            }
        }
        let Some(last_code_end) = last_code_end else {
            continue;
        };
        let proof = source[proof_begin..last_code_end].trim().to_string();
        if proof.is_empty() {
            continue;
        }

        let mut env_lines: Vec<&str> = Vec::new();
        let mut capture_continuation = false;
        for lv in &lines {
            if lv.start >= header.start {
                break;
            }
            if capture_continuation {
                if lv.depth_at_start > 0 {
                    env_lines.push(source[lv.start..lv.end].trim_end());
                    continue;
                }
                capture_continuation = false;
            }
            if let Some(cs) = lv.code_start {
                if lv.depth_at_start == 0 && ENV_KEYWORDS.contains(&first_token_of(source, cs)) {
                    env_lines.push(source[lv.start..lv.end].trim_end());
                    capture_continuation = true;
                }
            }
        }
        let env = env_lines.join("\n");

        records.push(TheoremRecord::new(
            format!("{path}#{ordinal}"),
            path.to_string(),
            env,
            statement,
            proof,
        ));
    }
    Ok(records)
}

/// Rejection by curation ≤ thresholds; NL is question + answer, formal is
/// statement + proof, both in characters.
pub const NL_MIN_CHARS: usize = 400;
pub const FORMAL_MIN_CHARS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    NlTooShort,
    FormalTooShort,
    EmptyField,
    RejectListed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::NlTooShort => "NL_TOO_SHORT",
            RejectReason::FormalTooShort => "FORMAL_TOO_SHORT",
            RejectReason::EmptyField => "EMPTY_FIELD",
            RejectReason::RejectListed => "REJECT_LISTED",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    #[serde(flatten)]
    pub record: ParallelRecord,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurationOutcome {
    pub kept: Vec<ParallelRecord>,
    pub rejected: Vec<RejectedRecord>,
}

/// Total function: every input record lands in `kept` or `rejected`.
pub fn curate(records: Vec<ParallelRecord>) -> CurationOutcome {
    curate_with_reject_list(records, &BTreeSet::new())
}

/// Curation with an explicit reject list (ids flagged by manual review).
pub fn curate_with_reject_list(
    records: Vec<ParallelRecord>,
    reject_ids: &BTreeSet<String>,
) -> CurationOutcome {
    let mut outcome = CurationOutcome::default();
    for mut record in records {
        record.refresh_counts();
        let reason = if reject_ids.contains(&record.theorem.id) {
            Some(RejectReason::RejectListed)
        } else if record.nl_question.trim().is_empty()
            || record.nl_answer.trim().is_empty()
            || record.theorem.statement.trim().is_empty()
            || record.theorem.proof.trim().is_empty()
        {
            Some(RejectReason::EmptyField)
        } else if record.char_count_nl <= NL_MIN_CHARS {
            Some(RejectReason::NlTooShort)
        } else if record.theorem.char_count_formal <= FORMAL_MIN_CHARS {
            Some(RejectReason::FormalTooShort)
        } else {
            None
        };
        match reason {
            None => outcome.kept.push(record),
            Some(reason) => outcome.rejected.push(RejectedRecord { record, reason }),
        }
    }
    outcome
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitError {
    RatiosDoNotSumToOne { sum: f64 },
    TooManyRatios { given: usize },
    InsufficientBasicPool { requested: usize, available: usize },
}

impl fmt::Display for SplitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitError::RatiosDoNotSumToOne { sum } => {
                write!(f, "split ratios sum to {sum}, expected 1.0")
            }
            SplitError::TooManyRatios { given } => {
                write!(f, "at most 3 split ratios (training, random_test, basic_test), got {given}")
            }
            SplitError::InsufficientBasicPool {
                requested,
                available,
            } => write!(
                f,
                "basic_test needs {requested} Basic.lean records, only {available} available"
            ),
        }
    }
}

impl core::error::Error for SplitError {}

fn is_basic(record: &ParallelRecord) -> bool {
    record.theorem.source_path.ends_with("Basic.lean")
}

/// Sample disjoint training / random_test / basic_test manifests without
/// replacement. Ratios map onto the splits in that order; identical
/// `(records, ratios, seed)` always yield identical manifests.
///
/// basic_test draws only from records whose `source_path` ends in
/// `Basic.lean`; that quota is reserved first so a small Basic pool is not
/// exhausted by the larger splits, then training and random_test draw from
/// everything that remains.
pub fn split(
    records: &[ParallelRecord],
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<SplitManifest>, SplitError> {
    if ratios.len() > 3 {
        return Err(SplitError::TooManyRatios {
            given: ratios.len(),
        });
    }
    let sum: f64 = ratios.iter().sum();
    if libm::fabs(sum - 1.0) > 1e-9 {
        return Err(SplitError::RatiosDoNotSumToOne { sum });
    }

    let n = records.len();
    let counts: Vec<usize> = ratios
        .iter()
        .map(|r| libm::floor(r * n as f64 + 1e-9) as usize)
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut order);

    let mut taken = alloc::vec![false; n];
    let basic_count = counts.get(2).copied().unwrap_or(0);
    let mut basic_ids: Vec<String> = Vec::with_capacity(basic_count);
    if basic_count > 0 {
        for &i in &order {
            if basic_ids.len() == basic_count {
                break;
            }
            if is_basic(&records[i]) {
                taken[i] = true;
                basic_ids.push(records[i].theorem.id.clone());
            }
        }
        if basic_ids.len() < basic_count {
            return Err(SplitError::InsufficientBasicPool {
                requested: basic_count,
                available: basic_ids.len(),
            });
        }
    }

    let names = [SplitName::Training, SplitName::RandomTest, SplitName::BasicTest];
    let mut manifests = Vec::new();
    let mut cursor = 0usize;
    for (slot, &count) in counts.iter().enumerate() {
        let name = names[slot];
        let ids = if name == SplitName::BasicTest {
            core::mem::take(&mut basic_ids)
        } else {
            let mut ids = Vec::with_capacity(count);
            while ids.len() < count && cursor < n {
                let i = order[cursor];
                cursor += 1;
                if !taken[i] {
                    taken[i] = true;
                    ids.push(records[i].theorem.id.clone());
                }
            }
            ids
        };
        manifests.push(SplitManifest {
            split_name: name,
            ids,
            seed,
        });
    }
    Ok(manifests)
}

/// Instruction template for turning a Lean theorem into a natural-language
/// question and answer. The `{Theorem}` slot receives `statement := proof`.
pub const INFORMALIZATION_PROMPT_TEMPLATE: &str = "You are a math expert familiar with the Lean 4 theorem prover, a tool used for formal verification of mathematical theorems and proofs. Given below is a statement and its proof written in Lean 4's syntax:\n{Theorem}.\n\nPlease translate the lemma and its corresponding proof into the identical natural language. The translation should accurately convey the same logical structure and content as the original Isabelle syntax. Explain the meaning of the lemma, detail the steps of the proof, and maintain the fidelity of the original mathematical reasoning.\n\nYou must respond in the following format:\n\n# Problem: ...\n\n# Proof: ...\n";

pub fn build_informalization_prompt(record: &TheoremRecord) -> String {
    INFORMALIZATION_PROMPT_TEMPLATE.replace("{Theorem}", &record.formal_text())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplyError {
    /// Reply lacks a `# Problem:` or `# Proof:` header. Callers treat this
    /// like an empty informalization and drop the record during curation.
    MalformedReply { missing: &'static str },
}

impl fmt::Display for ReplyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplyError::MalformedReply { missing } => {
                write!(f, "malformed informalization reply: missing '{missing}'")
            }
        }
    }
}

impl core::error::Error for ReplyError {}

const PROBLEM_HEADER: &str = "# Problem:";
const PROOF_HEADER: &str = "# Proof:";

/// Split an informalization reply into (question, answer) on its
/// `# Problem:` / `# Proof:` headers, trimming whitespace.
pub fn parse_informalization_reply(reply: &str) -> Result<(String, String), ReplyError> {
    let p = reply
        .find(PROBLEM_HEADER)
        .ok_or(ReplyError::MalformedReply {
            missing: PROBLEM_HEADER,
        })?;
    let after_problem = &reply[p + PROBLEM_HEADER.len()..];
    let q = after_problem
        .find(PROOF_HEADER)
        .ok_or(ReplyError::MalformedReply {
            missing: PROOF_HEADER,
        })?;
    let question = after_problem[..q].trim().to_string();
    let answer = after_problem[q + PROOF_HEADER.len()..].trim().to_string();
    Ok((question, answer))
}
