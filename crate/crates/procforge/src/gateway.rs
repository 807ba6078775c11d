//! Generation backends behind one contract: `POST /generate` with
//! `{prompt, n, temperature, max_tokens}`, answering `{samples: [{text,
//! logprob?}]}`. A scripted in-process mock and a record/replay cassette
//! wrapper keep everything runnable offline.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use procforge_core::gateway::{extract_lean_block, Candidate, GenerationRequest};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("generation backend unavailable after {retries} retries: {detail}")]
    BackendUnavailable { retries: u32, detail: String },
    #[error("invalid generation request: {0}")]
    InvalidRequest(#[from] procforge_core::gateway::RequestError),
    #[error("cassette: {0}")]
    Cassette(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateReply {
    pub samples: Vec<RawSample>,
}

pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerateReply, GatewayError>;
}

impl GenerationBackend for Box<dyn GenerationBackend> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerateReply, GatewayError> {
        (**self).generate(request)
    }
}

/// HTTP client for the generate contract. An optional wrapper template
/// (`{prompt}` placeholder) lets instruction-tuned backends receive the
/// prompt inside their own chat template.
pub struct HttpGenerationBackend {
    url: String,
    agent: ureq::Agent,
    wrapper: Option<String>,
    retries: u32,
}

impl HttpGenerationBackend {
    pub fn new(url: &str) -> Self {
        HttpGenerationBackend {
            url: url.to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(300))
                .build(),
            wrapper: None,
            retries: 2,
        }
    }

    pub fn with_wrapper(mut self, wrapper: Option<String>) -> Self {
        self.wrapper = wrapper;
        self
    }

    fn wrapped_prompt(&self, prompt: &str) -> String {
        match &self.wrapper {
            Some(w) => w.replace("{prompt}", prompt),
            None => prompt.to_string(),
        }
    }
}

impl GenerationBackend for HttpGenerationBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerateReply, GatewayError> {
        let body = serde_json::json!({
            "prompt": self.wrapped_prompt(&request.prompt),
            "n": request.n,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut last_err = String::new();
        for _attempt in 0..=self.retries {
            match self.agent.post(&self.url).send_json(body.clone()) {
                Ok(response) => {
                    return response
                        .into_json::<GenerateReply>()
                        .map_err(|e| GatewayError::BackendUnavailable {
                            retries: self.retries,
                            detail: format!("bad reply body: {e}"),
                        });
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::BackendUnavailable {
            retries: self.retries,
            detail: last_err,
        })
    }
}

/// One scripted mock rule: the first entry whose `match_substring` occurs in
/// the prompt supplies the samples; `"*"` matches anything.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MockGenerationRule {
    #[serde(rename = "match")]
    pub match_substring: String,
    pub samples: Vec<RawSample>,
}

pub struct MockGenerationBackend {
    rules: Vec<MockGenerationRule>,
}

impl MockGenerationBackend {
    pub fn new(rules: Vec<MockGenerationRule>) -> Self {
        MockGenerationBackend { rules }
    }

    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        Ok(Self::new(crate::jsonl::read_jsonl(path)?))
    }
}

impl GenerationBackend for MockGenerationBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerateReply, GatewayError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.match_substring == "*" || request.prompt.contains(&r.match_substring));
        let samples = rule
            .map(|r| {
                r.samples
                    .iter()
                    .take(request.n as usize)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        Ok(GenerateReply { samples })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CassetteEntry {
    request: GenerationRequest,
    response: GenerateReply,
}

/// Record/replay wrapper so live-backend sessions can be captured once and
/// re-run byte-identically in CI.
pub struct Cassette<B> {
    inner: Option<B>,
    mode: CassetteMode,
    path: PathBuf,
    entries: Mutex<Vec<CassetteEntry>>,
}

impl<B: GenerationBackend> Cassette<B> {
    pub fn record(inner: B, path: &Path) -> Self {
        Cassette {
            inner: Some(inner),
            mode: CassetteMode::Record,
            path: path.to_path_buf(),
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn replay(path: &Path) -> anyhow::Result<Self> {
        let entries: Vec<CassetteEntry> = crate::jsonl::read_jsonl(path)?;
        Ok(Cassette {
            inner: None,
            mode: CassetteMode::Replay,
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    /// Flush recorded exchanges to the cassette file.
    pub fn persist(&self) -> anyhow::Result<()> {
        if self.mode == CassetteMode::Record {
            let entries = self.entries.lock().unwrap();
            crate::jsonl::write_jsonl(&self.path, &entries)?;
        }
        Ok(())
    }
}

impl<B: GenerationBackend> GenerationBackend for Cassette<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerateReply, GatewayError> {
        match self.mode {
            CassetteMode::Record => {
                let reply = self
                    .inner
                    .as_ref()
                    .expect("record mode has an inner backend")
                    .generate(request)?;
                self.entries.lock().unwrap().push(CassetteEntry {
                    request: request.clone(),
                    response: reply.clone(),
                });
                Ok(reply)
            }
            CassetteMode::Replay => {
                let entries = self.entries.lock().unwrap();
                entries
                    .iter()
                    .find(|e| &e.request == request)
                    .map(|e| e.response.clone())
                    .ok_or_else(|| {
                        GatewayError::Cassette(format!(
                            "no recorded exchange for prompt {:?}... (n={})",
                            request.prompt.chars().take(40).collect::<String>(),
                            request.n
                        ))
                    })
            }
        }
    }
}

/// Sample `request.n` candidates for one instance. The reply is trimmed or
/// padded to exactly n: under-delivered slots become negative-flagged
/// empties. Each sample's text passes through Lean block extraction; samples
/// with no extractable Lean are negative.
pub fn generate(
    request: &GenerationRequest,
    instance_id: &str,
    backend: &dyn GenerationBackend,
) -> Result<Vec<Candidate>, GatewayError> {
    request.validate()?;
    let reply = backend.generate(request)?;
    let n = request.n as usize;
    if reply.samples.len() < n {
        crate::log_warn!(
            "instance {instance_id}: backend returned {} of {} samples; padding with negatives",
            reply.samples.len(),
            n
        );
    }
    let mut candidates = Vec::with_capacity(n);
    for (j, sample) in reply.samples.iter().take(n).enumerate() {
        let text = extract_lean_block(&sample.text);
        let candidate_id = format!("{instance_id}#{j}");
        if text.is_empty() {
            candidates.push(Candidate::negative(candidate_id, instance_id.to_string()));
        } else {
            candidates.push(Candidate {
                candidate_id,
                instance_id: instance_id.to_string(),
                text,
                gen_logprob: sample.logprob,
                negative: false,
            });
        }
    }
    for j in reply.samples.len()..n {
        candidates.push(Candidate::negative(
            format!("{instance_id}#{j}"),
            instance_id.to_string(),
        ));
    }
    Ok(candidates)
}

/// A dataset instance: natural-language question/answer plus the theorem
/// environment its formalization should compile against. Real-test style
/// rows have no formal side at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInstance {
    pub instance_id: String,
    pub nl_question: String,
    pub nl_answer: String,
    #[serde(default)]
    pub env: String,
}

/// Run generation over a dataset with bounded parallelism, preserving
/// dataset order in the output.
pub fn generate_dataset(
    instances: &[DatasetInstance],
    backend: &dyn GenerationBackend,
    n: u32,
    temperature: f64,
    max_tokens: u32,
    max_in_flight: usize,
) -> Result<Vec<Candidate>, GatewayError> {
    let results: Mutex<HashMap<usize, Result<Vec<Candidate>, GatewayError>>> =
        Mutex::new(HashMap::new());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(instances.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= instances.len() {
                    break;
                }
                let inst = &instances[idx];
                let prompt = procforge_core::gateway::build_autoformalization_prompt(
                    &inst.nl_question,
                    &inst.nl_answer,
                );
                let request = GenerationRequest {
                    prompt,
                    n,
                    temperature,
                    max_tokens,
                };
                let out = generate(&request, &inst.instance_id, backend);
                results.lock().unwrap().insert(idx, out);
            });
        }
    });
    let mut map = results.into_inner().unwrap();
    let mut all = Vec::new();
    for idx in 0..instances.len() {
        let batch = map.remove(&idx).expect("every instance processed")?;
        all.extend(batch);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_with(samples: Vec<&str>) -> MockGenerationBackend {
        MockGenerationBackend::new(vec![MockGenerationRule {
            match_substring: "*".into(),
            samples: samples
                .into_iter()
                .map(|t| RawSample {
                    text: t.into(),
                    logprob: Some(-1.0),
                })
                .collect(),
        }])
    }

    fn request(n: u32) -> GenerationRequest {
        GenerationRequest {
            prompt: "Translate this.".into(),
            n,
            temperature: 0.7,
            max_tokens: 256,
        }
    }

    #[test]
    fn scripted_candidates_arrive_in_order() {
        let backend = mock_with(vec![
            "theorem a : 1 = 1 := rfl",
            "theorem b : 2 = 2 := rfl",
        ]);
        let out = generate(&request(2), "inst0", &backend).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].candidate_id, "inst0#0");
        assert!(out[0].text.contains("theorem a"));
        assert_eq!(out[1].candidate_id, "inst0#1");
        assert!(!out[1].negative);
    }

    #[test]
    fn under_delivery_pads_with_flagged_negatives() {
        let backend = mock_with(vec!["theorem a : 1 = 1 := rfl"]);
        let out = generate(&request(20), "inst0", &backend).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out.iter().filter(|c| c.negative).count(), 19);
        assert!(out[19].text.is_empty());
    }

    #[test]
    fn prose_samples_are_negative() {
        let backend = mock_with(vec!["I am unable to help with that."]);
        let out = generate(&request(1), "inst0", &backend).unwrap();
        assert!(out[0].negative);
    }

    #[test]
    fn candidate_ids_unique_per_batch() {
        let backend = mock_with(vec!["theorem a : 1 = 1 := rfl"; 5]);
        let out = generate(&request(5), "inst0", &backend).unwrap();
        let ids: std::collections::BTreeSet<_> = out.iter().map(|c| &c.candidate_id).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn cassette_record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let backend = mock_with(vec!["theorem a : 1 = 1 := rfl"]);

        let recorder = Cassette::record(backend, &path);
        let mut recorded = Vec::new();
        for i in 0..5 {
            let mut req = request(1);
            req.prompt = format!("prompt {i}");
            recorded.push(recorder.generate(&req).unwrap());
        }
        recorder.persist().unwrap();

        let replayer: Cassette<MockGenerationBackend> = Cassette::replay(&path).unwrap();
        for i in 0..5 {
            let mut req = request(1);
            req.prompt = format!("prompt {i}");
            let replayed = replayer.generate(&req).unwrap();
            assert_eq!(replayed, recorded[i]);
        }
        // an unrecorded request is an error, not a guess
        let mut unknown = request(1);
        unknown.prompt = "never seen".into();
        assert!(replayer.generate(&unknown).is_err());
    }
}
