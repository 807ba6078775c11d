//! Command-line entry point: every pipeline stage as a subcommand with
//! JSONL file handoff between stages.
//!
//! Exit codes: 0 success, 1 usage or validation failure, 2 backend failure.
//! Each subcommand prints one machine-readable JSON summary line to stdout;
//! logs go to stderr.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use procforge_core::corpus::{
    build_informalization_prompt, curate_with_reject_list, extract_theorems, split, ParallelRecord,
    SplitManifest,
};
use procforge_core::filter::FilterPolicy;
use procforge_core::gateway::{build_autoformalization_prompt, Candidate};
use procforge_core::label::{label_outcome, label_process, segment_proof, LabeledCandidate};
use procforge_core::metrics::{build_eval_report, dataset_stats, BootstrapConfig, SplitStatsRow};
use procforge_core::repl::{CompilationResult, CompileJob, CompileStatus};
use procforge_core::verifier::{select_mp1, Aggregation, VerifierScore};

use crate::backend::{
    compile_batch, install_interrupt_handler, interrupted, CompilerBackend, LeanReplBackend,
    MockBackend,
};
use crate::gateway::{
    generate_dataset, Cassette, CassetteMode, DatasetInstance, GatewayError,
    GenerationBackend, HttpGenerationBackend, MockGenerationBackend,
};
use crate::jsonl;
use crate::loop_driver::{run_round, RoundBackends, RoundConfig};
use crate::mock_server::MockServer;
use crate::scorer::{score_candidates, HttpScorer, ScorerError, StepScorer, ToyScorer};
use crate::{log_error, log_info, log_warn};

#[derive(Parser)]
#[command(
    name = "procforge",
    version,
    about = "Lean 4 autoformalization feedback harness",
    disable_help_subcommand = true
)]
struct Cli {
    /// Seed for every randomized stage; fixed default keeps reruns byte-identical.
    #[arg(long, global = true, default_value_t = 17)]
    seed: u64,
    /// Worker pool size for parallel stages.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
    /// error | warn | info | debug
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract theorem records from Lean source files.
    Extract {
        /// `.lean` files or directories to walk.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply curation thresholds to a parallel corpus.
    Curate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where rejected records (with reason codes) go.
        #[arg(long)]
        rejected: PathBuf,
        /// Optional manual-review reject list, one record id per line.
        #[arg(long)]
        reject_list: Option<PathBuf>,
    },
    /// Sample disjoint dataset splits.
    Split {
        #[arg(long)]
        input: PathBuf,
        /// training,random_test,basic_test fractions, e.g. 0.8,0.15,0.05
        #[arg(long)]
        ratios: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build model prompts from records.
    Prompt {
        #[arg(long)]
        input: PathBuf,
        /// informalize | autoformalize
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample candidate formalizations from a generation backend.
    Generate {
        #[arg(long)]
        dataset: PathBuf,
        /// http(s) URL of the generate endpoint, or mock:<fixtures.jsonl>
        #[arg(long)]
        backend_url: String,
        #[arg(long, default_value_t = 20)]
        n: u32,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 2048)]
        max_tokens: u32,
        /// Wrapper template with a {prompt} placeholder for chat models.
        #[arg(long)]
        prompt_wrapper: Option<String>,
        /// Record or replay the backend exchange.
        #[arg(long)]
        cassette: Option<PathBuf>,
        /// record | replay
        #[arg(long, default_value = "record")]
        cassette_mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile candidate bodies against a backend.
    Compile {
        /// Job file: {candidate_id, env, body, timeout_ms} per line.
        #[arg(long, conflicts_with = "candidates")]
        jobs: Option<PathBuf>,
        /// Alternative input: a candidates file; environments come from --dataset.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Dataset supplying per-instance environments for --candidates.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// lean | mock
        #[arg(long, default_value = "mock")]
        backend: String,
        /// Mock fixture map (else PROCFORGE_MOCK_FIXTURES).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 60_000)]
        timeout_ms: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive step labels from compilation results.
    Label {
        #[arg(long)]
        jobs: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// process | outcome
        #[arg(long, default_value = "process")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidates with a step scorer.
    Score {
        #[arg(long)]
        candidates: PathBuf,
        /// toy | http(s) URL of the score endpoint
        #[arg(long, default_value = "toy")]
        scorer: String,
        /// Dataset supplying per-instance prompts (optional).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// min | product | last
        #[arg(long, default_value = "min")]
        agg: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the best candidate per instance.
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the evaluation report.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// One temperature-0 result per instance (optional).
        #[arg(long)]
        greedy_results: Option<PathBuf>,
        /// Comma-separated k values, e.g. 1,5
        #[arg(long, default_value = "1,5")]
        k: String,
        #[arg(long, default_value_t = 1000)]
        bootstrap_resamples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhancement loop operations.
    #[command(subcommand)]
    Loop(LoopCommand),
    /// Dataset statistics table.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of split manifests to group by (else one "all" row).
        #[arg(long)]
        split_manifests: Option<PathBuf>,
    },
    /// Serve the scripted generation/scorer mock over HTTP.
    ServeMock {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum LoopCommand {
    /// Run one enhancement round.
    Run(LoopRunArgs),
}

#[derive(Args)]
struct LoopRunArgs {
    /// rft | verifier | both
    #[arg(long)]
    policy: String,
    #[arg(long)]
    workspace: PathBuf,
    /// http(s) URL, or mock:<fixtures.jsonl>; optional when --candidates is given.
    #[arg(long)]
    gen_backend: Option<String>,
    /// toy | http(s) URL
    #[arg(long, default_value = "toy")]
    scorer: String,
    /// lean | mock
    #[arg(long, default_value = "mock")]
    compiler: String,
    /// Mock compile fixture map.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Bootstrap candidate file (round 0 without a generator).
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    round: u32,
    #[arg(long, default_value_t = 20)]
    n: u32,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 2048)]
    max_tokens: u32,
    #[arg(long, default_value_t = 60_000)]
    timeout_ms: u64,
    /// min | product | last
    #[arg(long, default_value = "min")]
    agg: String,
    /// POSTed `{round, dataset_path}` when a round completes.
    #[arg(long)]
    webhook: Option<String>,
}

/// Marker wrapped around errors that must exit with code 2.
#[derive(Debug)]
struct BackendFailure;

impl std::fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("backend failure")
    }
}

impl std::error::Error for BackendFailure {}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<BackendFailure>().is_some()
        || err.downcast_ref::<GatewayError>().is_some()
        || err.downcast_ref::<ScorerError>().is_some()
    {
        return 2;
    }
    for cause in err.chain() {
        if cause.is::<BackendFailure>() || cause.is::<GatewayError>() || cause.is::<ScorerError>() {
            return 2;
        }
    }
    1
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/usage; map every parse failure to 1
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 1 };
        }
    };
    if let Some(level) = crate::logx::parse_level(&cli.log_level) {
        crate::logx::set_level(level);
    } else {
        eprintln!("unknown log level '{}'", cli.log_level);
        return 1;
    }
    install_interrupt_handler();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            log_error!("{e:#}");
            exit_code_for(&e)
        }
    }
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn collect_lean_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut stack = vec![input.clone()];
            while let Some(dir) = stack.pop() {
                for entry in std::fs::read_dir(&dir)
                    .with_context(|| format!("read dir {}", dir.display()))?
                {
                    let path = entry?.path();
                    if path.is_dir() {
                        stack.push(path);
                    } else if path.extension().is_some_and(|e| e == "lean") {
                        files.push(path);
                    }
                }
            }
        } else {
            files.push(input.clone());
        }
    }
    files.sort();
    Ok(files)
}

fn parse_ks(raw: &str) -> Result<Vec<u64>> {
    raw.split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad k value '{t}'")))
        .collect()
}

fn compiler_factory(
    backend: &str,
    fixtures: Option<&Path>,
) -> Result<Box<dyn Fn(usize) -> Result<Box<dyn CompilerBackend>> + Sync + Send>> {
    match backend {
        "mock" => {
            let mock = match fixtures {
                Some(path) => MockBackend::from_path(path)?,
                None => MockBackend::from_env()?,
            };
            Ok(Box::new(move |_| Ok(Box::new(mock.clone()) as Box<dyn CompilerBackend>)))
        }
        "lean" => {
            // validate launch config once, up front
            LeanReplBackend::from_env().context(BackendFailure)?;
            Ok(Box::new(|_| {
                Ok(Box::new(LeanReplBackend::from_env()?) as Box<dyn CompilerBackend>)
            }))
        }
        other => bail!("unknown compiler backend '{other}' (expected lean or mock)"),
    }
}

fn generation_backend(url: &str, wrapper: Option<String>) -> Result<Box<dyn GenerationBackend>> {
    if let Some(path) = url.strip_prefix("mock:") {
        Ok(Box::new(MockGenerationBackend::from_path(Path::new(path))?))
    } else if url.starts_with("http://") || url.starts_with("https://") {
        Ok(Box::new(HttpGenerationBackend::new(url).with_wrapper(wrapper)))
    } else {
        bail!("backend url must be http(s)://... or mock:<path>, got '{url}'")
    }
}

fn step_scorer(selector: &str) -> Result<Box<dyn StepScorer>> {
    if selector == "toy" {
        Ok(Box::new(ToyScorer))
    } else if selector.starts_with("http://") || selector.starts_with("https://") {
        Ok(Box::new(HttpScorer::new(selector)))
    } else {
        bail!("scorer must be 'toy' or an http(s) URL, got '{selector}'")
    }
}

fn read_dataset(path: &Path) -> Result<Vec<DatasetInstance>> {
    jsonl::read_jsonl(path)
}

fn prompts_by_instance(instances: &[DatasetInstance]) -> HashMap<String, String> {
    instances
        .iter()
        .map(|i| {
            (
                i.instance_id.clone(),
                build_autoformalization_prompt(&i.nl_question, &i.nl_answer),
            )
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { input, out } => {
            let files = collect_lean_files(&input)?;
            let mut records: Vec<ParallelRecord> = Vec::new();
            for file in &files {
                let source = std::fs::read_to_string(file)
                    .with_context(|| format!("read {}", file.display()))?;
                let theorems = extract_theorems(&source, &file.to_string_lossy())
                    .with_context(|| format!("extract from {}", file.display()))?;
                records.extend(theorems.into_iter().map(|t| {
                    ParallelRecord::new(t, String::new(), String::new())
                }));
            }
            jsonl::write_jsonl(&out, &records)?;
            summary(json!({
                "cmd": "extract",
                "files": files.len(),
                "records": records.len(),
                "out": out,
            }));
            Ok(())
        }

        Command::Curate {
            input,
            out,
            rejected,
            reject_list,
        } => {
            let records = jsonl::read_corpus(&input)?;
            let reject_ids: BTreeSet<String> = match reject_list {
                Some(path) => std::fs::read_to_string(&path)
                    .with_context(|| format!("read {}", path.display()))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                None => BTreeSet::new(),
            };
            let outcome = curate_with_reject_list(records, &reject_ids);
            jsonl::write_jsonl(&out, &outcome.kept)?;
            jsonl::write_jsonl(&rejected, &outcome.rejected)?;
            summary(json!({
                "cmd": "curate",
                "kept": outcome.kept.len(),
                "rejected": outcome.rejected.len(),
                "out": out,
                "rejected_out": rejected,
            }));
            Ok(())
        }

        Command::Split {
            input,
            ratios,
            out_dir,
        } => {
            let records = jsonl::read_corpus(&input)?;
            let parsed: Result<Vec<f64>> = ratios
                .split(',')
                .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad ratio '{t}'")))
                .collect();
            let manifests = split(&records, &parsed?, cli.seed)?;
            std::fs::create_dir_all(&out_dir)?;
            let mut names = Vec::new();
            for manifest in &manifests {
                let path = out_dir.join(format!("{}.json", manifest.split_name));
                jsonl::write_atomic(&path, serde_json::to_string_pretty(manifest)?.as_bytes())?;
                names.push(json!({
                    "split": manifest.split_name.to_string(),
                    "size": manifest.ids.len(),
                }));
            }
            summary(json!({
                "cmd": "split",
                "seed": cli.seed,
                "splits": names,
                "out_dir": out_dir,
            }));
            Ok(())
        }

        Command::Prompt { input, mode, out } => {
            #[derive(serde::Serialize)]
            struct PromptRow<'a> {
                id: &'a str,
                prompt: String,
            }
            let records = jsonl::read_corpus(&input)?;
            let rows: Vec<PromptRow> = match mode.as_str() {
                "informalize" => records
                    .iter()
                    .map(|r| PromptRow {
                        id: &r.theorem.id,
                        prompt: build_informalization_prompt(&r.theorem),
                    })
                    .collect(),
                "autoformalize" => records
                    .iter()
                    .map(|r| PromptRow {
                        id: &r.theorem.id,
                        prompt: build_autoformalization_prompt(&r.nl_question, &r.nl_answer),
                    })
                    .collect(),
                other => bail!("unknown prompt mode '{other}' (informalize|autoformalize)"),
            };
            jsonl::write_jsonl(&out, &rows)?;
            summary(json!({"cmd": "prompt", "mode": mode, "prompts": rows.len(), "out": out}));
            Ok(())
        }

        Command::Generate {
            dataset,
            backend_url,
            n,
            temperature,
            max_tokens,
            prompt_wrapper,
            cassette,
            cassette_mode,
            out,
        } => {
            let instances = read_dataset(&dataset)?;
            let mode = match cassette_mode.as_str() {
                "record" => CassetteMode::Record,
                "replay" => CassetteMode::Replay,
                other => bail!("unknown cassette mode '{other}'"),
            };
            let candidates = match (&cassette, mode) {
                (Some(path), CassetteMode::Record) => {
                    let backend = generation_backend(&backend_url, prompt_wrapper)?;
                    let recorder = Cassette::record(backend, path);
                    let out = generate_dataset(
                        &instances,
                        &recorder,
                        n,
                        temperature,
                        max_tokens,
                        cli.workers,
                    )?;
                    recorder.persist()?;
                    out
                }
                // replay never touches the live backend
                (Some(path), CassetteMode::Replay) => {
                    let replayer: Cassette<Box<dyn GenerationBackend>> = Cassette::replay(path)?;
                    generate_dataset(&instances, &replayer, n, temperature, max_tokens, cli.workers)?
                }
                (None, _) => {
                    let backend = generation_backend(&backend_url, prompt_wrapper)?;
                    generate_dataset(
                        &instances,
                        backend.as_ref(),
                        n,
                        temperature,
                        max_tokens,
                        cli.workers,
                    )?
                }
            };
            let negatives = candidates.iter().filter(|c| c.negative).count();
            jsonl::write_jsonl(&out, &candidates)?;
            summary(json!({
                "cmd": "generate",
                "instances": instances.len(),
                "candidates": candidates.len(),
                "negatives": negatives,
                "out": out,
            }));
            Ok(())
        }

        Command::Compile {
            jobs,
            candidates,
            dataset,
            backend,
            fixtures,
            timeout_ms,
            out,
        } => {
            let jobs: Vec<CompileJob> = match (jobs, candidates) {
                (Some(path), None) => {
                    let mut jobs: Vec<CompileJob> = jsonl::read_jsonl(&path)?;
                    for job in &mut jobs {
                        if job.timeout_ms == 0 {
                            job.timeout_ms = timeout_ms;
                        }
                    }
                    jobs
                }
                (None, Some(path)) => {
                    let cands: Vec<Candidate> = jsonl::read_jsonl(&path)?;
                    let envs: HashMap<String, String> = match dataset {
                        Some(d) => read_dataset(&d)?
                            .into_iter()
                            .map(|i| (i.instance_id, i.env))
                            .collect(),
                        None => HashMap::new(),
                    };
                    cands
                        .into_iter()
                        .map(|c| CompileJob {
                            env: envs.get(&c.instance_id).cloned().unwrap_or_default(),
                            candidate_id: c.candidate_id,
                            body: c.text,
                            timeout_ms,
                        })
                        .collect()
                }
                _ => bail!("exactly one of --jobs or --candidates is required"),
            };
            let factory = compiler_factory(&backend, fixtures.as_deref())?;
            let results = compile_batch(&jobs, factory.as_ref(), cli.workers.max(1));
            jsonl::write_jsonl(&out, &results)?;
            if interrupted() {
                let marker = out.with_extension("partial");
                std::fs::write(&marker, b"interrupted before batch completion\n")?;
                log_warn!("interrupted; partial-results marker at {}", marker.display());
            }
            let succeeded = results
                .iter()
                .filter(|r| r.status == CompileStatus::Success)
                .count();
            summary(json!({
                "cmd": "compile",
                "backend": backend,
                "jobs": jobs.len(),
                "success": succeeded,
                "workers": cli.workers,
                "out": out,
                "partial": interrupted(),
            }));
            Ok(())
        }

        Command::Label {
            jobs,
            results,
            scheme,
            out,
        } => {
            let jobs: Vec<CompileJob> = jsonl::read_jsonl(&jobs)?;
            let results: Vec<CompilationResult> = jsonl::read_jsonl(&results)?;
            let body_by_id: HashMap<&str, &str> = jobs
                .iter()
                .map(|j| (j.candidate_id.as_str(), j.body.as_str()))
                .collect();
            let mut rows: Vec<LabeledCandidate> = Vec::new();
            let mut skipped = 0usize;
            for result in results {
                let Some(body) = body_by_id.get(result.candidate_id.as_str()) else {
                    bail!("result for unknown candidate {}", result.candidate_id);
                };
                let steps = segment_proof(body);
                let body_result = result.into_body_coordinates();
                let labeled = match scheme.as_str() {
                    "process" => label_process(&steps, &body_result),
                    "outcome" => label_outcome(&steps, &body_result),
                    other => bail!("unknown label scheme '{other}' (process|outcome)"),
                };
                match labeled {
                    Ok(labels) => rows.push(LabeledCandidate::new(steps, labels)),
                    Err(_) => skipped += 1, // timeout/backend_error: no signal
                }
            }
            jsonl::write_jsonl(&out, &rows)?;
            summary(json!({
                "cmd": "label",
                "scheme": scheme,
                "labeled": rows.len(),
                "skipped_unlabelable": skipped,
                "out": out,
            }));
            Ok(())
        }

        Command::Score {
            candidates,
            scorer,
            dataset,
            agg,
            out,
        } => {
            let cands: Vec<Candidate> = jsonl::read_jsonl(&candidates)?;
            let prompts = match dataset {
                Some(path) => prompts_by_instance(&read_dataset(&path)?),
                None => HashMap::new(),
            };
            let aggregation: Aggregation = agg.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let scorer = step_scorer(&scorer)?;
            let scores =
                score_candidates(&prompts, &cands, scorer.as_ref(), aggregation, cli.workers)?;
            jsonl::write_jsonl(&out, &scores)?;
            let predicted_correct = scores
                .iter()
                .filter(|s| s.predicted_label == procforge_core::label::Label::Correct)
                .count();
            summary(json!({
                "cmd": "score",
                "candidates": cands.len(),
                "predicted_correct": predicted_correct,
                "out": out,
            }));
            Ok(())
        }

        Command::Select {
            scores,
            candidates,
            out,
        } => {
            #[derive(serde::Serialize)]
            struct SelectionRow {
                instance_id: String,
                candidate_id: String,
                fallback: bool,
            }
            let scores: Vec<VerifierScore> = jsonl::read_jsonl(&scores)?;
            let cands: Vec<Candidate> = jsonl::read_jsonl(&candidates)?;
            let instance_of: HashMap<&str, &str> = cands
                .iter()
                .map(|c| (c.candidate_id.as_str(), c.instance_id.as_str()))
                .collect();
            let mut order: Vec<&str> = Vec::new();
            let mut grouped: HashMap<&str, Vec<&VerifierScore>> = HashMap::new();
            for score in &scores {
                let Some(instance) = instance_of.get(score.candidate_id.as_str()) else {
                    bail!("score for unknown candidate {}", score.candidate_id);
                };
                if !grouped.contains_key(instance) {
                    order.push(instance);
                }
                grouped.entry(instance).or_default().push(score);
            }
            let mut rows = Vec::new();
            let mut fallbacks = 0usize;
            for instance in order {
                let members: Vec<VerifierScore> =
                    grouped[instance].iter().map(|s| (*s).clone()).collect();
                let selection = select_mp1(&members)
                    .map_err(|e| anyhow::anyhow!("instance {instance}: {e}"))?;
                fallbacks += selection.fallback as usize;
                rows.push(SelectionRow {
                    instance_id: instance.to_string(),
                    candidate_id: selection.candidate_id,
                    fallback: selection.fallback,
                });
            }
            jsonl::write_jsonl(&out, &rows)?;
            summary(json!({
                "cmd": "select",
                "instances": rows.len(),
                "fallbacks": fallbacks,
                "out": out,
            }));
            Ok(())
        }

        Command::Evaluate {
            results,
            scores,
            candidates,
            greedy_results,
            k,
            bootstrap_resamples,
            out,
        } => {
            let results: Vec<CompilationResult> = jsonl::read_jsonl(&results)?;
            let scores: Vec<VerifierScore> = jsonl::read_jsonl(&scores)?;
            let cands: Vec<Candidate> = jsonl::read_jsonl(&candidates)?;
            let greedy: Option<Vec<CompilationResult>> = match greedy_results {
                Some(path) => Some(jsonl::read_jsonl(&path)?),
                None => None,
            };
            let ks = parse_ks(&k)?;
            let report = build_eval_report(
                &cands,
                &results,
                &scores,
                greedy.as_deref(),
                &ks,
                &BootstrapConfig {
                    resamples: bootstrap_resamples,
                    seed: cli.seed,
                },
            )?;
            jsonl::write_atomic(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
            let mut line = json!({
                "cmd": "evaluate",
                "instances": report.counts.instances,
                "candidates": report.counts.candidates,
                "mp1": report.mp1,
                "out": out,
            });
            if let Some(obj) = line.as_object_mut() {
                for (k, v) in &report.pass_at {
                    obj.insert(format!("pass@{k}"), json!(v));
                }
            }
            summary(line);
            Ok(())
        }

        Command::Loop(LoopCommand::Run(args)) => {
            let policy: FilterPolicy =
                args.policy.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let instances = read_dataset(&args.dataset)?;
            let aggregation: Aggregation =
                args.agg.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let generator: Option<Box<dyn GenerationBackend>> = match &args.gen_backend {
                Some(url) => Some(generation_backend(url, None)?),
                None => None,
            };
            if generator.is_none() && args.candidates.is_none() {
                bail!("loop run needs --gen-backend or a --candidates bootstrap file");
            }
            let scorer = step_scorer(&args.scorer)?;
            let factory = compiler_factory(&args.compiler, args.fixtures.as_deref())?;
            let config = RoundConfig {
                round: args.round,
                workspace: args.workspace.clone(),
                policy,
                instances,
                n_samples: args.n,
                temperature: args.temperature,
                max_tokens: args.max_tokens,
                timeout_ms: args.timeout_ms,
                compile_workers: cli.workers.max(1),
                scorer_max_in_flight: cli.workers.max(1),
                aggregation,
                bootstrap_candidates: args.candidates.clone(),
                webhook_url: args.webhook.clone(),
            };
            let manifest = run_round(
                &config,
                &RoundBackends {
                    generator: generator.as_deref(),
                    compiler_factory: factory.as_ref(),
                    scorer: scorer.as_ref(),
                },
            )?;
            summary(json!({
                "cmd": "loop_run",
                "round": manifest.round,
                "policy": manifest.policy,
                "counts": manifest.counts,
                "dataset_quality": manifest.dataset_quality,
                "workspace": args.workspace,
            }));
            Ok(())
        }

        Command::Stats {
            dataset,
            split_manifests,
        } => {
            let records = jsonl::read_corpus(&dataset)?;
            let groups: Vec<(String, Vec<ParallelRecord>)> = match split_manifests {
                Some(dir) => {
                    let mut groups = Vec::new();
                    let by_id: HashMap<&str, &ParallelRecord> = records
                        .iter()
                        .map(|r| (r.theorem.id.as_str(), r))
                        .collect();
                    for name in ["training", "random_test", "basic_test", "real_test"] {
                        let path = dir.join(format!("{name}.json"));
                        if !path.exists() {
                            continue;
                        }
                        let manifest: SplitManifest =
                            serde_json::from_str(&std::fs::read_to_string(&path)?)
                                .with_context(|| format!("parse {}", path.display()))?;
                        let members: Vec<ParallelRecord> = manifest
                            .ids
                            .iter()
                            .filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone()))
                            .collect();
                        groups.push((name.to_string(), members));
                    }
                    groups
                }
                None => vec![("all".to_string(), records.clone())],
            };
            let rows = dataset_stats(&groups);
            print_stats_table(&rows);
            summary(json!({
                "cmd": "stats",
                "records": records.len(),
                "rows": rows,
            }));
            Ok(())
        }

        Command::ServeMock { fixtures, port } => {
            let backend = MockGenerationBackend::from_path(&fixtures)?;
            let server = MockServer::start(MockGenerationBackend::from_path(&fixtures)?, port)?;
            summary(json!({
                "cmd": "serve_mock",
                "generate_url": server.generate_url(),
                "score_url": server.score_url(),
            }));
            log_info!("serving mock backend on {} (ctrl-c to stop)", server.addr);
            server.run_blocking(&backend);
            Ok(())
        }
    }
}

fn print_stats_table(rows: &[SplitStatsRow]) {
    println!(
        "{:<12} {:>7} | {:>9} {:>9} {:>7} {:>7} | {:>9} {:>9} {:>7} {:>7}",
        "split", "size", "f_mean", "f_median", "f_min", "f_max", "nl_mean", "nl_median", "nl_min", "nl_max"
    );
    for row in rows {
        let fmt_stats = |s: &Option<procforge_core::metrics::FieldStats>| match s {
            Some(s) => format!(
                "{:>9.1} {:>9.1} {:>7} {:>7}",
                s.mean, s.median, s.min, s.max
            ),
            None => format!("{:>9} {:>9} {:>7} {:>7}", "-", "-", "-", "-"),
        };
        println!(
            "{:<12} {:>7} | {} | {}",
            row.split,
            row.size,
            fmt_stats(&row.formal),
            fmt_stats(&row.nl)
        );
    }
}
