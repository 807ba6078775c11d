//! The enhancement loop: generate candidates, compile them for feedback,
//! score them, filter per policy, and emit the round's fine-tune datasets.
//!
//! One round = one workspace directory `rounds/<k>/` holding candidates,
//! results, scores, labels, the SFT dataset, the verifier dataset, and a
//! manifest. Rounds are append-only: re-running a completed round with the
//! same inputs is a no-op, and changed inputs against an existing round are
//! an error rather than an overwrite. Training itself is external — the
//! driver emits datasets and optionally notifies a webhook, it never blocks
//! on a trainer.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use procforge_core::filter::{
    dataset_quality, filter_both, filter_rft, filter_verifier, FilterPolicy, RoundCounts,
    RoundManifest,
};
use procforge_core::gateway::{build_autoformalization_prompt, Candidate};
use procforge_core::hash::content_hash;
use procforge_core::label::{label_process, segment_proof, LabeledCandidate};
use procforge_core::repl::{CompilationResult, CompileJob, CompileStatus};
use procforge_core::verifier::{Aggregation, VerifierScore};

use crate::backend::{compile_batch, CompilerBackend};
use crate::gateway::{generate_dataset, DatasetInstance, GenerationBackend};
use crate::jsonl;
use crate::scorer::{score_candidates, StepScorer};

/// One supervised fine-tune example.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SftExample {
    pub prompt: String,
    pub completion: String,
}

pub struct RoundConfig {
    pub round: u32,
    pub workspace: PathBuf,
    pub policy: FilterPolicy,
    pub instances: Vec<DatasetInstance>,
    pub n_samples: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub compile_workers: usize,
    pub scorer_max_in_flight: usize,
    pub aggregation: Aggregation,
    /// Round 0 may bootstrap from an existing candidate file instead of
    /// calling the generation backend.
    pub bootstrap_candidates: Option<PathBuf>,
    pub webhook_url: Option<String>,
}

pub struct RoundBackends<'a> {
    pub generator: Option<&'a dyn GenerationBackend>,
    pub compiler_factory: &'a (dyn Fn(usize) -> Result<Box<dyn CompilerBackend>> + Sync),
    pub scorer: &'a dyn StepScorer,
}

pub fn round_dir(workspace: &Path, round: u32) -> PathBuf {
    workspace.join("rounds").join(round.to_string())
}

/// Emit the `{prompt, completion}` SFT dataset for the selected candidates,
/// ordered by (instance_id, candidate_id). An empty selection still writes
/// the (empty) file so downstream tooling sees the round as complete.
pub fn emit_sft_dataset(
    path: &Path,
    selected_ids: &[String],
    candidates: &[Candidate],
    prompts: &HashMap<String, String>,
) -> Result<usize> {
    if selected_ids.is_empty() {
        crate::log_warn!("empty selection: writing empty SFT dataset {}", path.display());
    }
    let by_id: HashMap<&str, &Candidate> = candidates
        .iter()
        .map(|c| (c.candidate_id.as_str(), c))
        .collect();
    let mut rows: Vec<(&str, &str, SftExample)> = Vec::new();
    for id in selected_ids {
        let candidate = by_id
            .get(id.as_str())
            .with_context(|| format!("selected id {id} not among candidates"))?;
        let prompt = prompts
            .get(&candidate.instance_id)
            .with_context(|| format!("no prompt for instance {}", candidate.instance_id))?;
        rows.push((
            candidate.instance_id.as_str(),
            candidate.candidate_id.as_str(),
            SftExample {
                prompt: prompt.clone(),
                completion: candidate.text.clone(),
            },
        ));
    }
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let examples: Vec<SftExample> = rows.into_iter().map(|(_, _, e)| e).collect();
    jsonl::write_jsonl(path, &examples)?;
    Ok(examples.len())
}

/// Emit the verifier training dataset: process-scheme step labels for every
/// labelable candidate of the round (timeouts and backend errors carry no
/// first-error signal and are excluded).
pub fn emit_verifier_dataset(
    path: &Path,
    candidates: &[Candidate],
    results: &[CompilationResult],
) -> Result<usize> {
    let by_id: HashMap<&str, &Candidate> = candidates
        .iter()
        .map(|c| (c.candidate_id.as_str(), c))
        .collect();
    let mut rows: Vec<LabeledCandidate> = Vec::new();
    for result in results {
        if !matches!(result.status, CompileStatus::Success | CompileStatus::Failed) {
            continue;
        }
        let candidate = by_id
            .get(result.candidate_id.as_str())
            .with_context(|| format!("result for unknown candidate {}", result.candidate_id))?;
        let steps = segment_proof(&candidate.text);
        let body_result = result.clone().into_body_coordinates();
        let labels = label_process(&steps, &body_result)
            .expect("labelable status checked above");
        rows.push(LabeledCandidate::new(steps, labels));
    }
    jsonl::write_jsonl(path, &rows)?;
    Ok(rows.len())
}

fn input_fingerprint(config: &RoundConfig, bootstrap_bytes: Option<&[u8]>) -> String {
    let mut seed = format!(
        "round={};policy={};n={};temp={};max_tokens={};timeout={};agg={:?};instances=",
        config.round,
        config.policy,
        config.n_samples,
        config.temperature,
        config.max_tokens,
        config.timeout_ms,
        config.aggregation,
    );
    for inst in &config.instances {
        seed.push_str(&inst.instance_id);
        seed.push('\x1f');
        seed.push_str(&content_hash(&format!(
            "{}\x1f{}\x1f{}",
            inst.nl_question, inst.nl_answer, inst.env
        )));
        seed.push(';');
    }
    if let Some(bytes) = bootstrap_bytes {
        seed.push_str(&content_hash(&String::from_utf8_lossy(bytes)));
    }
    content_hash(&seed)
}

fn notify_webhook(url: &str, round: u32, dataset_path: &Path) {
    let body = serde_json::json!({
        "round": round,
        "dataset_path": dataset_path.to_string_lossy(),
    });
    let agent = ureq::AgentBuilder::new()
        .timeout(std::time::Duration::from_secs(10))
        .build();
    match agent.post(url).send_json(body) {
        Ok(_) => crate::log_info!("webhook notified: {url}"),
        Err(e) => crate::log_warn!("webhook {url} failed (training not triggered): {e}"),
    }
}

/// Execute one round end to end. Returns the manifest; if the round was
/// already complete with identical inputs, returns the stored manifest
/// without touching the workspace.
pub fn run_round(config: &RoundConfig, backends: &RoundBackends<'_>) -> Result<RoundManifest> {
    let dir = round_dir(&config.workspace, config.round);
    let manifest_path = dir.join("manifest.json");

    let bootstrap_bytes = match &config.bootstrap_candidates {
        Some(path) => Some(std::fs::read(path).with_context(|| format!("read {}", path.display()))?),
        None => None,
    };
    let input_hash = input_fingerprint(config, bootstrap_bytes.as_deref());

    if manifest_path.exists() {
        let stored: RoundManifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
                .with_context(|| format!("parse {}", manifest_path.display()))?;
        if stored.input_hash == input_hash {
            crate::log_info!("round {} already complete; no-op", config.round);
            return Ok(stored);
        }
        bail!(
            "round {} exists with different inputs (stored hash {}, current {}); \
             workspaces are append-only, use a fresh round or workspace",
            config.round,
            stored.input_hash,
            input_hash
        );
    }

    if config.round > 0 {
        let prior = round_dir(&config.workspace, config.round - 1).join("manifest.json");
        if !prior.exists() && config.bootstrap_candidates.is_none() {
            bail!(
                "stale pipeline: round {} requested but {} is missing",
                config.round,
                prior.display()
            );
        }
        crate::log_warn!(
            "multi-round operation is experimental; the reference procedure performs one enhancement pass"
        );
    }

    std::fs::create_dir_all(&dir)?;

    let prompts: HashMap<String, String> = config
        .instances
        .iter()
        .map(|inst| {
            (
                inst.instance_id.clone(),
                build_autoformalization_prompt(&inst.nl_question, &inst.nl_answer),
            )
        })
        .collect();

    // 1. candidates: bootstrap file or fresh generation
    let candidates: Vec<Candidate> = match &config.bootstrap_candidates {
        Some(path) => {
            crate::log_info!("round {}: bootstrapping candidates from {}", config.round, path.display());
            jsonl::read_jsonl(path)?
        }
        None => {
            let generator = backends
                .generator
                .context("no generation backend and no bootstrap candidate file")?;
            generate_dataset(
                &config.instances,
                generator,
                config.n_samples,
                config.temperature,
                config.max_tokens,
                config.scorer_max_in_flight.max(1),
            )?
        }
    };
    jsonl::write_jsonl(&dir.join("candidates.jsonl"), &candidates)?;

    // 2. compile everything for feedback (quality measurement + labels)
    let env_by_instance: HashMap<&str, &str> = config
        .instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i.env.as_str()))
        .collect();
    let jobs: Vec<CompileJob> = candidates
        .iter()
        .map(|c| CompileJob {
            candidate_id: c.candidate_id.clone(),
            env: env_by_instance
                .get(c.instance_id.as_str())
                .copied()
                .unwrap_or("")
                .to_string(),
            body: c.text.clone(),
            timeout_ms: config.timeout_ms,
        })
        .collect();
    let results = compile_batch(&jobs, backends.compiler_factory, config.compile_workers.max(1));
    jsonl::write_jsonl(&dir.join("results.jsonl"), &results)?;

    // 3. score everything (the verifier path)
    let scores: Vec<VerifierScore> = score_candidates(
        &prompts,
        &candidates,
        backends.scorer,
        config.aggregation,
        config.scorer_max_in_flight.max(1),
    )?;
    jsonl::write_jsonl(&dir.join("scores.jsonl"), &scores)?;

    // 4. filters and counts
    let rft = filter_rft(&results);
    let verifier = filter_verifier(&scores);
    let both = filter_both(&results, &scores);
    let selected = match config.policy {
        FilterPolicy::Rft => &rft,
        FilterPolicy::Verifier => &verifier,
        FilterPolicy::RftAndVerifier => &both,
    };

    // 5. datasets
    let sft_path = dir.join("sft.jsonl");
    emit_sft_dataset(&sft_path, selected, &candidates, &prompts)?;
    emit_verifier_dataset(&dir.join("verifier.jsonl"), &candidates, &results)?;
    // raw labels for all labelable candidates, same schema as the verifier set
    emit_verifier_dataset(&dir.join("labels.jsonl"), &candidates, &results)?;

    let counts = RoundCounts {
        generated: candidates.len(),
        compiled_success: results
            .iter()
            .filter(|r| r.status == CompileStatus::Success)
            .count(),
        selected_rft: rft.len(),
        selected_verifier: verifier.len(),
        selected_both: both.len(),
    };
    let manifest = RoundManifest {
        round: config.round,
        workspace: config.workspace.to_string_lossy().into_owned(),
        policy: config.policy,
        counts,
        dataset_quality: dataset_quality(selected, &results),
        input_hash,
        created_at_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    };
    debug_assert!(manifest.counts_consistent());
    jsonl::write_atomic(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    if let Some(url) = &config.webhook_url {
        notify_webhook(url, config.round, &sft_path);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::gateway::{MockGenerationBackend, MockGenerationRule, RawSample};
    use crate::scorer::ToyScorer;

    fn instances(n: usize) -> Vec<DatasetInstance> {
        (0..n)
            .map(|i| DatasetInstance {
                instance_id: format!("inst{i:02}"),
                nl_question: format!("Question {i}: is {i} equal to {i}?"),
                nl_answer: format!("Answer {i}: yes, both sides are {i}."),
                env: String::new(),
            })
            .collect()
    }

    /// Per-instance scripted samples: a clean proof, a sorry proof, and a
    /// long gibberish proof that compiles but scores poorly.
    fn generation_rules(n: usize) -> Vec<MockGenerationRule> {
        (0..n)
            .map(|i| MockGenerationRule {
                match_substring: format!("Question {i}:"),
                samples: vec![
                    RawSample {
                        text: format!("theorem good{i} : {i} = {i} := by\n  rfl"),
                        logprob: Some(-0.1),
                    },
                    RawSample {
                        text: format!("theorem half{i} : {i} = {i} := by\n  sorry"),
                        logprob: Some(-0.9),
                    },
                    RawSample {
                        text: format!(
                            "theorem odd{i} : {i} = {i} := by\n  bizarre_unfathomable_incantation alpha beta gamma delta epsilon zeta"
                        ),
                        logprob: Some(-2.0),
                    },
                ],
            })
            .collect()
    }

    fn config(dir: &Path, policy: FilterPolicy) -> RoundConfig {
        RoundConfig {
            round: 0,
            workspace: dir.to_path_buf(),
            policy,
            instances: instances(4),
            n_samples: 3,
            temperature: 0.7,
            max_tokens: 256,
            timeout_ms: 1000,
            compile_workers: 2,
            scorer_max_in_flight: 2,
            aggregation: Aggregation::Min,
            bootstrap_candidates: None,
            webhook_url: None,
        }
    }

    fn backends(generator: &MockGenerationBackend) -> RoundBackends<'_> {
        RoundBackends {
            generator: Some(generator),
            compiler_factory: &|_| Ok(Box::new(MockBackend::empty()) as Box<dyn CompilerBackend>),
            scorer: &ToyScorer,
        }
    }

    #[test]
    fn full_mock_round_counts_are_traceable() {
        let dir = tempfile::tempdir().unwrap();
        let generator = MockGenerationBackend::new(generation_rules(4));
        let manifest = run_round(
            &config(dir.path(), FilterPolicy::RftAndVerifier),
            &backends(&generator),
        )
        .unwrap();

        // per instance: good compiles + scores high; sorry fails compile but
        // scores high; gibberish compiles but scores low
        assert_eq!(manifest.counts.generated, 12);
        assert_eq!(manifest.counts.compiled_success, 8);
        assert_eq!(manifest.counts.selected_rft, 8);
        assert_eq!(manifest.counts.selected_verifier, 8);
        assert_eq!(manifest.counts.selected_both, 4);
        assert_eq!(manifest.dataset_quality, Some(1.0));
        assert!(manifest.counts_consistent());

        let sft: Vec<SftExample> =
            jsonl::read_jsonl(&round_dir(dir.path(), 0).join("sft.jsonl")).unwrap();
        assert_eq!(sft.len(), 4);
        assert!(sft.iter().all(|e| e.completion.contains("rfl")));

        let verifier_rows =
            jsonl::read_labeled(&round_dir(dir.path(), 0).join("verifier.jsonl")).unwrap();
        assert_eq!(verifier_rows.len(), 12, "all candidates labelable on mock");
    }

    #[test]
    fn rerun_is_a_noop_and_conflicts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let generator = MockGenerationBackend::new(generation_rules(4));
        let cfg = config(dir.path(), FilterPolicy::Rft);
        let first = run_round(&cfg, &backends(&generator)).unwrap();
        let manifest_bytes =
            std::fs::read(round_dir(dir.path(), 0).join("manifest.json")).unwrap();

        let second = run_round(&cfg, &backends(&generator)).unwrap();
        assert_eq!(first, second);
        let manifest_bytes_after =
            std::fs::read(round_dir(dir.path(), 0).join("manifest.json")).unwrap();
        assert_eq!(manifest_bytes, manifest_bytes_after, "workspace untouched");

        let mut changed = config(dir.path(), FilterPolicy::Rft);
        changed.n_samples = 2;
        let err = run_round(&changed, &backends(&generator)).unwrap_err();
        assert!(err.to_string().contains("append-only"));
    }

    #[test]
    fn policy_selection_subsets() {
        let dir_rft = tempfile::tempdir().unwrap();
        let dir_both = tempfile::tempdir().unwrap();
        let generator = MockGenerationBackend::new(generation_rules(4));
        let m_rft = run_round(&config(dir_rft.path(), FilterPolicy::Rft), &backends(&generator)).unwrap();
        let m_both = run_round(
            &config(dir_both.path(), FilterPolicy::RftAndVerifier),
            &backends(&generator),
        )
        .unwrap();
        assert!(m_both.counts.selected_both <= m_rft.counts.selected_rft);
        let sft_rft: Vec<SftExample> =
            jsonl::read_jsonl(&round_dir(dir_rft.path(), 0).join("sft.jsonl")).unwrap();
        let sft_both: Vec<SftExample> =
            jsonl::read_jsonl(&round_dir(dir_both.path(), 0).join("sft.jsonl")).unwrap();
        let rft_set: std::collections::BTreeSet<&str> =
            sft_rft.iter().map(|e| e.completion.as_str()).collect();
        assert!(sft_both.iter().all(|e| rft_set.contains(e.completion.as_str())));
    }

    #[test]
    fn round_one_requires_prior_manifest_or_bootstrap() {
        let dir = tempfile::tempdir().unwrap();
        let generator = MockGenerationBackend::new(generation_rules(4));
        let mut cfg = config(dir.path(), FilterPolicy::Rft);
        cfg.round = 1;
        let err = run_round(&cfg, &backends(&generator)).unwrap_err();
        assert!(err.to_string().contains("stale pipeline"));
    }

    #[test]
    fn bootstrap_candidates_skip_generation() {
        let dir = tempfile::tempdir().unwrap();
        let boot = dir.path().join("boot.jsonl");
        let candidates = vec![
            Candidate {
                candidate_id: "inst00#0".into(),
                instance_id: "inst00".into(),
                text: "theorem b : 1 = 1 := by\n  rfl".into(),
                gen_logprob: None,
                negative: false,
            },
            Candidate {
                candidate_id: "inst01#0".into(),
                instance_id: "inst01".into(),
                text: String::new(),
                gen_logprob: None,
                negative: true,
            },
        ];
        jsonl::write_jsonl(&boot, &candidates).unwrap();
        let mut cfg = config(dir.path(), FilterPolicy::Rft);
        cfg.instances = instances(2);
        cfg.bootstrap_candidates = Some(boot);
        let manifest = run_round(
            &cfg,
            &RoundBackends {
                generator: None,
                compiler_factory: &|_| Ok(Box::new(MockBackend::empty()) as Box<dyn CompilerBackend>),
                scorer: &ToyScorer,
            },
        )
        .unwrap();
        assert_eq!(manifest.counts.generated, 2);
        assert_eq!(manifest.counts.compiled_success, 1);
        // the negative candidate failed to compile (empty body)
        let verifier_rows =
            jsonl::read_labeled(&round_dir(dir.path(), 0).join("verifier.jsonl")).unwrap();
        assert_eq!(verifier_rows.len(), 2);
    }

    #[test]
    fn webhook_receives_round_and_dataset_path() {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => a,
            other => panic!("unexpected addr {other:?}"),
        };
        let receiver = std::thread::spawn(move || {
            let mut request = server.recv().unwrap();
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body).unwrap();
            let _ = request.respond(tiny_http::Response::from_string("ok"));
            body
        });

        let dir = tempfile::tempdir().unwrap();
        let generator = MockGenerationBackend::new(generation_rules(4));
        let mut cfg = config(dir.path(), FilterPolicy::Rft);
        cfg.webhook_url = Some(format!("http://{addr}/train"));
        run_round(&cfg, &backends(&generator)).unwrap();

        let body = receiver.join().unwrap();
        let payload: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(payload["round"], 0);
        assert!(payload["dataset_path"]
            .as_str()
            .unwrap()
            .ends_with("sft.jsonl"));
    }

    #[test]
    fn later_rounds_never_touch_earlier_files() {
        let dir = tempfile::tempdir().unwrap();
        let generator = MockGenerationBackend::new(generation_rules(4));
        let cfg0 = config(dir.path(), FilterPolicy::Rft);
        run_round(&cfg0, &backends(&generator)).unwrap();

        let round0_dir = round_dir(dir.path(), 0);
        let snapshot: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(&round0_dir)
            .unwrap()
            .map(|e| {
                let path = e.unwrap().path();
                let bytes = std::fs::read(&path).unwrap();
                (path, bytes)
            })
            .collect();

        let mut cfg1 = config(dir.path(), FilterPolicy::Rft);
        cfg1.round = 1;
        let manifest = run_round(&cfg1, &backends(&generator)).unwrap();
        assert_eq!(manifest.round, 1);
        assert!(round_dir(dir.path(), 1).join("manifest.json").exists());

        for (path, bytes) in snapshot {
            assert_eq!(std::fs::read(&path).unwrap(), bytes, "{} changed", path.display());
        }
    }

    #[test]
    fn empty_selection_writes_empty_sft_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let n = emit_sft_dataset(&path, &[], &[], &HashMap::new()).unwrap();
        assert_eq!(n, 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn sft_emission_is_byte_stable() {
        let candidates = vec![
            Candidate {
                candidate_id: "b#1".into(),
                instance_id: "b".into(),
                text: "theorem x : 1 = 1 := rfl".into(),
                gen_logprob: None,
                negative: false,
            },
            Candidate {
                candidate_id: "a#0".into(),
                instance_id: "a".into(),
                text: "theorem y : 2 = 2 := rfl".into(),
                gen_logprob: None,
                negative: false,
            },
        ];
        let mut prompts = HashMap::new();
        prompts.insert("a".to_string(), "prompt a".to_string());
        prompts.insert("b".to_string(), "prompt b".to_string());
        let selected = vec!["b#1".to_string(), "a#0".to_string()];

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.jsonl");
        let p2 = dir.path().join("two.jsonl");
        emit_sft_dataset(&p1, &selected, &candidates, &prompts).unwrap();
        emit_sft_dataset(&p2, &selected, &candidates, &prompts).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        assert_eq!(b1, std::fs::read(&p2).unwrap());
        // deterministic ordering by instance id regardless of selection order
        let rows: Vec<SftExample> = jsonl::read_jsonl(&p1).unwrap();
        assert_eq!(rows[0].prompt, "prompt a");
    }

    #[test]
    fn timeout_only_round_emits_empty_verifier_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verifier.jsonl");
        let candidates = vec![Candidate {
            candidate_id: "c#0".into(),
            instance_id: "c".into(),
            text: "theorem t : 1 = 1 := rfl".into(),
            gen_logprob: None,
            negative: false,
        }];
        let results = vec![CompilationResult {
            candidate_id: "c#0".into(),
            status: CompileStatus::Timeout,
            diagnostics: vec![],
            env_line_offset: 1,
            elapsed_ms: 100,
        }];
        let n = emit_verifier_dataset(&path, &candidates, &results).unwrap();
        assert_eq!(n, 0);
    }
}
