//! Compiler backend wire types: jobs, diagnostics, reply parsing, and
//! result classification.
//!
//! The wire protocol is line-delimited JSON: one `{"cmd": <text>, "env": 0}`
//! object per request, one reply object per line carrying `messages` (with
//! `severity`, `pos.line`, `pos.column`, `data`) and optionally `sorries`.
//! Classification is a pure function of the diagnostics: a result succeeds
//! iff it has no error and no warning that a declaration uses `sorry` — a
//! sorry-warning means the logic is incomplete even though the compiler
//! accepted the syntax.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// 1-based.
    pub line: u32,
    /// 0-based.
    pub column: u32,
    pub message: String,
}

pub const SORRY_WARNING: &str = "declaration uses 'sorry'";

pub fn is_sorry_warning(d: &Diagnostic) -> bool {
    d.severity == Severity::Warning && d.message.contains(SORRY_WARNING)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompileStatus {
    Success,
    Failed,
    Timeout,
    BackendError,
}

impl fmt::Display for CompileStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompileStatus::Success => "success",
            CompileStatus::Failed => "failed",
            CompileStatus::Timeout => "timeout",
            CompileStatus::BackendError => "backend_error",
        })
    }
}

/// One candidate submission. The text sent to the backend is the theorem
/// environment, a separator line, then the candidate body, so the body's
/// first line lands at `env_line_offset() + 1` in backend coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileJob {
    pub candidate_id: String,
    pub env: String,
    /// Statement plus proof, exactly as the candidate produced it.
    pub body: String,
    #[serde(default)]
    pub timeout_ms: u64,
}

impl CompileJob {
    fn env_trimmed(&self) -> &str {
        self.env.trim_end_matches('\n')
    }

    /// Number of lines prepended before the candidate body.
    pub fn env_line_offset(&self) -> u32 {
        let env = self.env_trimmed();
        let lines = if env.is_empty() { 0 } else { env.lines().count() };
        (lines + 1) as u32
    }

    /// Environment, newline, candidate body.
    pub fn submitted_text(&self) -> String {
        let env = self.env_trimmed();
        if env.is_empty() {
            alloc::format!("\n{}", self.body)
        } else {
            alloc::format!("{}\n\n{}", env, self.body)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompilationResult {
    pub candidate_id: String,
    pub status: CompileStatus,
    /// Sorted by (line, column), in backend coordinates unless shifted with
    /// [`CompilationResult::into_body_coordinates`].
    pub diagnostics: Vec<Diagnostic>,
    pub env_line_offset: u32,
    pub elapsed_ms: u64,
}

impl CompilationResult {
    pub fn backend_error(candidate_id: &str, env_line_offset: u32, elapsed_ms: u64) -> Self {
        CompilationResult {
            candidate_id: candidate_id.to_string(),
            status: CompileStatus::BackendError,
            diagnostics: Vec::new(),
            env_line_offset,
            elapsed_ms,
        }
    }

    /// Diagnostics that landed on prepended environment lines.
    pub fn env_level_diagnostics(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(move |d| d.line <= self.env_line_offset)
    }

    /// Shift diagnostic lines into 1-based candidate-body coordinates and
    /// zero the offset. Environment-level diagnostics never reach here in
    /// labelable results (they force `backend_error`); any stragglers clamp
    /// to line 1.
    pub fn into_body_coordinates(mut self) -> Self {
        let off = self.env_line_offset;
        for d in &mut self.diagnostics {
            d.line = d.line.saturating_sub(off).max(1);
        }
        self.env_line_offset = 0;
        self
    }
}

/// A parsed backend reply line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplReply {
    pub diagnostics: Vec<Diagnostic>,
    pub sorries: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolError {
    pub detail: String,
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unparseable backend reply: {}", self.detail)
    }
}

impl core::error::Error for ProtocolError {}

#[derive(Deserialize)]
struct RawPos {
    #[serde(default)]
    line: u32,
    #[serde(default)]
    column: u32,
}

#[derive(Deserialize)]
struct RawMessage {
    #[serde(default)]
    severity: String,
    pos: Option<RawPos>,
    #[serde(default)]
    data: String,
}

#[derive(Deserialize)]
struct RawReply {
    #[serde(default)]
    messages: Vec<RawMessage>,
    #[serde(default)]
    sorries: Vec<serde_json::Value>,
}

/// Parse one reply line. Unknown fields are tolerated; unknown severities
/// are treated as info, which never affects classification.
pub fn parse_repl_message(raw: &str) -> Result<ReplReply, ProtocolError> {
    let parsed: RawReply = serde_json::from_str(raw).map_err(|e| ProtocolError {
        detail: e.to_string(),
    })?;
    let diagnostics = parsed
        .messages
        .into_iter()
        .map(|m| {
            let pos = m.pos.unwrap_or(RawPos { line: 1, column: 0 });
            Diagnostic {
                severity: match m.severity.as_str() {
                    "error" => Severity::Error,
                    "warning" => Severity::Warning,
                    _ => Severity::Info,
                },
                line: pos.line.max(1),
                column: pos.column,
                message: m.data,
            }
        })
        .collect();
    Ok(ReplReply {
        diagnostics,
        sorries: parsed.sorries.len(),
    })
}

pub fn sort_diagnostics(diags: &mut [Diagnostic]) {
    diags.sort_by(|a, b| (a.line, a.column).cmp(&(b.line, b.column)));
}

/// Success iff no error-severity diagnostic and no sorry warning. Info
/// messages are neutral.
pub fn classify_status(diags: &[Diagnostic]) -> CompileStatus {
    let failed = diags
        .iter()
        .any(|d| d.severity == Severity::Error || is_sorry_warning(d));
    if failed {
        CompileStatus::Failed
    } else {
        CompileStatus::Success
    }
}

/// Assemble a result from a reply: sort diagnostics, classify, and force
/// `backend_error` when any diagnostic lands on an environment line (the
/// environment itself is assumed valid, so an error there means the backend
/// was fed something broken).
pub fn finalize_result(
    candidate_id: &str,
    env_line_offset: u32,
    mut diagnostics: Vec<Diagnostic>,
    elapsed_ms: u64,
) -> CompilationResult {
    sort_diagnostics(&mut diagnostics);
    let env_level = diagnostics.iter().any(|d| d.line <= env_line_offset);
    let status = if env_level {
        CompileStatus::BackendError
    } else {
        classify_status(&diagnostics)
    };
    CompilationResult {
        candidate_id: candidate_id.to_string(),
        status,
        diagnostics,
        env_line_offset,
        elapsed_ms,
    }
}
