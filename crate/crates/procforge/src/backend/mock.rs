//! Deterministic mock compiler backend.
//!
//! Driven by a fixture map keyed on the FNV hash of the candidate body
//! (`PROCFORGE_MOCK_FIXTURES` or an explicit path). Bodies without a fixture
//! entry follow built-in rules that mirror what a real Lean compile does at
//! the level this harness observes: empty bodies error, bodies containing a
//! `sorry` token get the sorry warning at its line, everything else
//! succeeds. Latency is scripted, actually slept, and reported back as the
//! result's elapsed time so batches are bit-reproducible.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use procforge_core::hash::content_hash;
use procforge_core::label::find_sorry_token;
use procforge_core::repl::{CompileJob, Diagnostic, ReplReply, Severity, SORRY_WARNING};

use super::{BackendOutcome, BackendResponse, CompilerBackend};

/// One scripted behavior. Diagnostic lines are 1-based body-relative; the
/// mock shifts them by the job's environment offset like a real compiler
/// reporting on the submitted text.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MockFixture {
    pub body_hash: String,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub sorries: usize,
    #[serde(default)]
    pub crash: bool,
}

#[derive(Clone)]
pub struct MockBackend {
    fixtures: Arc<HashMap<String, MockFixture>>,
    default_latency_ms: u64,
}

impl MockBackend {
    pub fn empty() -> Self {
        MockBackend {
            fixtures: Arc::new(HashMap::new()),
            default_latency_ms: 0,
        }
    }

    pub fn from_fixtures(fixtures: Vec<MockFixture>) -> Self {
        let map = fixtures
            .into_iter()
            .map(|f| (f.body_hash.clone(), f))
            .collect();
        MockBackend {
            fixtures: Arc::new(map),
            default_latency_ms: 0,
        }
    }

    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let fixtures: Vec<MockFixture> = crate::jsonl::read_jsonl(path)?;
        Ok(Self::from_fixtures(fixtures))
    }

    /// Fixture path from `PROCFORGE_MOCK_FIXTURES` when set, else empty.
    pub fn from_env() -> anyhow::Result<Self> {
        match std::env::var_os("PROCFORGE_MOCK_FIXTURES") {
            Some(path) => Self::from_path(Path::new(&path)),
            None => Ok(Self::empty()),
        }
    }

    /// Latency applied to bodies without a fixture entry.
    pub fn with_default_latency(mut self, ms: u64) -> Self {
        self.default_latency_ms = ms;
        self
    }
}

impl CompilerBackend for MockBackend {
    fn compile(&mut self, job: &CompileJob) -> BackendResponse {
        let fixture = self.fixtures.get(&content_hash(&job.body));
        let latency = fixture
            .map(|f| f.latency_ms)
            .unwrap_or(self.default_latency_ms);

        let budget = if job.timeout_ms == 0 { u64::MAX } else { job.timeout_ms };
        let slept = latency.min(budget);
        if slept > 0 {
            std::thread::sleep(Duration::from_millis(slept));
        }
        if latency > budget {
            return BackendResponse {
                outcome: BackendOutcome::Timeout,
                elapsed_ms: Some(budget),
            };
        }
        if fixture.map(|f| f.crash).unwrap_or(false) {
            return BackendResponse {
                outcome: BackendOutcome::Crashed("scripted crash".into()),
                elapsed_ms: Some(latency),
            };
        }

        let offset = job.env_line_offset();
        let mut diagnostics: Vec<Diagnostic> = fixture
            .map(|f| f.diagnostics.clone())
            .unwrap_or_default();
        for d in &mut diagnostics {
            d.line += offset;
        }
        let mut sorries = fixture.map(|f| f.sorries).unwrap_or(0);

        if job.body.trim().is_empty() {
            diagnostics.push(Diagnostic {
                severity: Severity::Error,
                line: offset + 1,
                column: 0,
                message: "unexpected end of input".into(),
            });
        } else if let Some((line, column)) = find_sorry_token(&job.body) {
            let already = diagnostics.iter().any(|d| d.message.contains(SORRY_WARNING));
            if !already {
                diagnostics.push(Diagnostic {
                    severity: Severity::Warning,
                    line: line + offset,
                    column,
                    message: SORRY_WARNING.into(),
                });
                sorries += 1;
            }
        }

        BackendResponse {
            outcome: BackendOutcome::Reply(ReplReply {
                diagnostics,
                sorries,
            }),
            elapsed_ms: Some(latency),
        }
    }
}
