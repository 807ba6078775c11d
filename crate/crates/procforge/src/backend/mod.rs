//! Compiler backends and the parallel compilation driver.
//!
//! A backend owns one channel to a compiler (a Lean REPL child process or
//! the deterministic mock) and is used by exactly one worker at a time.
//! `compile_batch` runs a fixed pool of workers over a shared job queue;
//! results come back in job order and every job yields exactly one result no
//! matter what the backends do.

pub mod lean;
pub mod mock;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use procforge_core::repl::{finalize_result, CompilationResult, CompileJob, CompileStatus, ReplReply};

pub use lean::LeanReplBackend;
pub use mock::{MockBackend, MockFixture};

/// What a backend produced for one job.
#[derive(Debug)]
pub enum BackendOutcome {
    Reply(ReplReply),
    Timeout,
    Crashed(String),
    Protocol(String),
}

#[derive(Debug)]
pub struct BackendResponse {
    pub outcome: BackendOutcome,
    /// Deterministic backends report their own elapsed time so results are
    /// reproducible; `None` means "measure wall time".
    pub elapsed_ms: Option<u64>,
}

pub trait CompilerBackend: Send {
    fn compile(&mut self, job: &CompileJob) -> BackendResponse;
}

/// Run one job to completion and normalize the response into a
/// [`CompilationResult`]: diagnostics sorted, environment-level diagnostics
/// forcing `backend_error`, sorry warnings counting as failure.
pub fn compile_one(job: &CompileJob, backend: &mut dyn CompilerBackend) -> CompilationResult {
    let offset = job.env_line_offset();
    let started = Instant::now();
    let response = backend.compile(job);
    let elapsed = response
        .elapsed_ms
        .unwrap_or_else(|| started.elapsed().as_millis() as u64);
    match response.outcome {
        BackendOutcome::Reply(reply) => {
            finalize_result(&job.candidate_id, offset, reply.diagnostics, elapsed)
        }
        BackendOutcome::Timeout => CompilationResult {
            candidate_id: job.candidate_id.clone(),
            status: CompileStatus::Timeout,
            diagnostics: Vec::new(),
            env_line_offset: offset,
            elapsed_ms: elapsed,
        },
        BackendOutcome::Crashed(detail) | BackendOutcome::Protocol(detail) => {
            crate::log_debug!("job {} backend error: {detail}", job.candidate_id);
            CompilationResult::backend_error(&job.candidate_id, offset, elapsed)
        }
    }
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// Install a SIGINT handler that lets in-flight jobs finish; the batch then
/// stops claiming new jobs and the caller writes a partial-results marker.
pub fn install_interrupt_handler() {
    extern "C" fn on_sigint(_: libc::c_int) {
        INTERRUPTED.store(true, Ordering::SeqCst);
    }
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
    }
}

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

#[cfg(test)]
pub fn reset_interrupt_for_tests() {
    INTERRUPTED.store(false, Ordering::SeqCst);
}

/// Compile all jobs on a pool of `workers` threads, each owning one backend
/// from `factory`. The returned list matches job order and always has one
/// entry per job: a panicking backend yields `backend_error` for the job it
/// was running and is rebuilt for the next one.
pub fn compile_batch<F>(jobs: &[CompileJob], factory: F, workers: usize) -> Vec<CompilationResult>
where
    F: Fn(usize) -> anyhow::Result<Box<dyn CompilerBackend>> + Sync,
{
    assert!(workers >= 1, "workers must be >= 1");
    if jobs.is_empty() {
        return Vec::new();
    }
    let workers = workers.min(jobs.len());
    let next_job = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CompilationResult>>> = Mutex::new(vec![None; jobs.len()]);

    std::thread::scope(|scope| {
        for worker_idx in 0..workers {
            let next_job = &next_job;
            let slots = &slots;
            let factory = &factory;
            scope.spawn(move || {
                let mut backend: Option<Box<dyn CompilerBackend>> = None;
                loop {
                    if interrupted() {
                        break;
                    }
                    let idx = next_job.fetch_add(1, Ordering::SeqCst);
                    if idx >= jobs.len() {
                        break;
                    }
                    let job = &jobs[idx];
                    if backend.is_none() {
                        match factory(worker_idx) {
                            Ok(b) => backend = Some(b),
                            Err(e) => {
                                crate::log_error!("worker {worker_idx}: backend setup failed: {e}");
                                let result =
                                    CompilationResult::backend_error(&job.candidate_id, job.env_line_offset(), 0);
                                slots.lock().unwrap()[idx] = Some(result);
                                break;
                            }
                        }
                    }
                    let b = backend.as_mut().unwrap();
                    let result = catch_unwind(AssertUnwindSafe(|| compile_one(job, b.as_mut())))
                        .unwrap_or_else(|_| {
                            crate::log_warn!(
                                "worker {worker_idx}: backend panicked on job {}",
                                job.candidate_id
                            );
                            backend = None; // rebuild before the next job
                            CompilationResult::backend_error(&job.candidate_id, job.env_line_offset(), 0)
                        });
                    slots.lock().unwrap()[idx] = Some(result);
                }
            });
        }
    });

    // Jobs left unclaimed (every worker died during setup, or an interrupt)
    // still need a result so the batch stays lossless.
    let slots = slots.into_inner().unwrap();
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            slot.unwrap_or_else(|| {
                let job = &jobs[i];
                CompilationResult::backend_error(&job.candidate_id, job.env_line_offset(), 0)
            })
        })
        .collect()
}
