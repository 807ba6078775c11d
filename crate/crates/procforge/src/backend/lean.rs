//! Real Lean 4 REPL backend: a child process speaking line-delimited JSON.
//!
//! Requests go to the child's stdin as one `{"cmd": ..., "env": 0}` object
//! per line followed by a blank line; replies are read from stdout until a
//! complete JSON value parses (the REPL may pretty-print across lines). A
//! timeout kills the child and the next job gets a fresh one. The launch
//! command comes from `PROCFORGE_LEAN_CMD`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::Deserialize;

use procforge_core::repl::{parse_repl_message, CompileJob};

use super::{BackendOutcome, BackendResponse, CompilerBackend};

pub const LEAN_CMD_ENV: &str = "PROCFORGE_LEAN_CMD";
pub const LEAN_MANIFEST_ENV: &str = "PROCFORGE_LEAN_MANIFEST";
const DEFAULT_TIMEOUT_MS: u64 = 60_000;

struct ChildHandle {
    child: Child,
    stdin: std::process::ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

pub struct LeanReplBackend {
    command: Vec<String>,
    handle: Option<ChildHandle>,
}

impl LeanReplBackend {
    /// Build from `PROCFORGE_LEAN_CMD` (whitespace-split launch command).
    pub fn from_env() -> anyhow::Result<Self> {
        let cmd = std::env::var(LEAN_CMD_ENV)
            .map_err(|_| anyhow::anyhow!("{LEAN_CMD_ENV} is not set; cannot launch a Lean REPL"))?;
        let command: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            anyhow::bail!("{LEAN_CMD_ENV} is empty");
        }
        if let Ok(manifest) = std::env::var(LEAN_MANIFEST_ENV) {
            for warning in validate_library_manifest_files(Path::new(&manifest)) {
                crate::log_warn!("library manifest: {warning}");
            }
        }
        Ok(LeanReplBackend {
            command,
            handle: None,
        })
    }

    pub fn from_command(command: Vec<String>) -> Self {
        LeanReplBackend {
            command,
            handle: None,
        }
    }

    fn spawn(&mut self) -> anyhow::Result<()> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        self.handle = Some(ChildHandle {
            child,
            stdin,
            lines: rx,
        });
        Ok(())
    }

    fn kill(&mut self) {
        if let Some(mut handle) = self.handle.take() {
            let _ = handle.child.kill();
            let _ = handle.child.wait();
        }
    }

    /// Accumulate stdout lines until they parse as one JSON value, a blank
    /// line closes the reply, or the deadline passes. Replies are JSON
    /// objects, so a buffer that cannot open one fails immediately.
    fn read_reply(handle: &ChildHandle, deadline: Instant) -> Result<String, BackendOutcome> {
        let mut buffer = String::new();
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Err(BackendOutcome::Timeout);
            }
            match handle.lines.recv_timeout(deadline - now) {
                Ok(Ok(line)) => {
                    if line.trim().is_empty() {
                        if buffer.is_empty() {
                            continue;
                        }
                        return Err(BackendOutcome::Protocol(format!(
                            "incomplete reply: {buffer:?}"
                        )));
                    }
                    buffer.push_str(&line);
                    buffer.push('\n');
                    if !buffer.trim_start().starts_with('{') {
                        return Err(BackendOutcome::Protocol(format!(
                            "reply is not a JSON object: {:?}",
                            buffer.trim()
                        )));
                    }
                    if serde_json::from_str::<serde::de::IgnoredAny>(buffer.trim()).is_ok() {
                        return Ok(buffer.trim().to_string());
                    }
                }
                Ok(Err(e)) => return Err(BackendOutcome::Crashed(e.to_string())),
                Err(RecvTimeoutError::Timeout) => return Err(BackendOutcome::Timeout),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(BackendOutcome::Crashed("REPL process exited".into()))
                }
            }
        }
    }
}

impl CompilerBackend for LeanReplBackend {
    fn compile(&mut self, job: &CompileJob) -> BackendResponse {
        let timeout = if job.timeout_ms == 0 {
            DEFAULT_TIMEOUT_MS
        } else {
            job.timeout_ms
        };
        if self.handle.is_none() {
            if let Err(e) = self.spawn() {
                return BackendResponse {
                    outcome: BackendOutcome::Crashed(format!("spawn failed: {e}")),
                    elapsed_ms: None,
                };
            }
        }
        let request = serde_json::json!({ "cmd": job.submitted_text(), "env": 0 });
        let handle = self.handle.as_mut().expect("spawned above");
        if let Err(e) = writeln!(handle.stdin, "{request}\n") {
            self.kill();
            return BackendResponse {
                outcome: BackendOutcome::Crashed(format!("stdin write failed: {e}")),
                elapsed_ms: None,
            };
        }
        let _ = handle.stdin.flush();

        let deadline = Instant::now() + Duration::from_millis(timeout);
        let outcome = match Self::read_reply(handle, deadline) {
            Ok(raw) => match parse_repl_message(&raw) {
                Ok(reply) => BackendOutcome::Reply(reply),
                Err(e) => BackendOutcome::Protocol(e.to_string()),
            },
            Err(err) => {
                // a timed-out or dead child is unusable for the next job
                self.kill();
                err
            }
        };
        BackendResponse {
            outcome,
            elapsed_ms: None,
        }
    }
}

impl Drop for LeanReplBackend {
    fn drop(&mut self) {
        self.kill();
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct LibraryPin {
    pub name: String,
    #[serde(default)]
    pub url: String,
    pub revision: String,
}

#[derive(Deserialize)]
struct ExpectedManifest {
    libraries: Vec<LibraryPin>,
    #[serde(default)]
    lake_manifest: Option<String>,
}

#[derive(Deserialize)]
struct LakeManifest {
    #[serde(default)]
    packages: Vec<LakePackage>,
}

#[derive(Deserialize)]
struct LakePackage {
    #[serde(default)]
    name: String,
    #[serde(default)]
    rev: String,
}

/// Compare pinned library revisions against a lake manifest. Any mismatch is
/// a warning, not an error: the harness still runs, the results just may not
/// reproduce the reference toolchain's behavior.
pub fn validate_library_manifest(
    expected: &[LibraryPin],
    lake_manifest_json: &str,
) -> Vec<String> {
    let mut warnings = Vec::new();
    let lake: LakeManifest = match serde_json::from_str(lake_manifest_json) {
        Ok(l) => l,
        Err(e) => return vec![format!("unreadable lake manifest: {e}")],
    };
    for pin in expected {
        match lake.packages.iter().find(|p| p.name.eq_ignore_ascii_case(&pin.name)) {
            None => warnings.push(format!("library '{}' not present in lake manifest", pin.name)),
            Some(p) => {
                let matches = p.rev.starts_with(&pin.revision) || pin.revision.starts_with(&p.rev);
                if !matches {
                    warnings.push(format!(
                        "library '{}' pinned at {} but lake manifest has {}",
                        pin.name, pin.revision, p.rev
                    ));
                }
            }
        }
    }
    warnings
}

fn validate_library_manifest_files(expected_path: &Path) -> Vec<String> {
    let raw = match std::fs::read_to_string(expected_path) {
        Ok(r) => r,
        Err(e) => return vec![format!("cannot read {}: {e}", expected_path.display())],
    };
    let expected: ExpectedManifest = match serde_json::from_str(&raw) {
        Ok(m) => m,
        Err(e) => return vec![format!("cannot parse {}: {e}", expected_path.display())],
    };
    let Some(lake_path) = expected.lake_manifest else {
        return vec!["no lake_manifest path given; pin validation skipped".into()];
    };
    let lake_raw = match std::fs::read_to_string(expected_path.parent().unwrap_or(Path::new(".")).join(&lake_path)) {
        Ok(r) => r,
        Err(e) => return vec![format!("cannot read lake manifest {lake_path}: {e}")],
    };
    validate_library_manifest(&expected.libraries, &lake_raw)
}
