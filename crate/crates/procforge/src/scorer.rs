//! Step scorer transports: the offline toy scorer and the HTTP contract
//! (`POST /score` with `{prompt, steps}` answering `{p_correct: [...]}`).

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use procforge_core::gateway::Candidate;
use procforge_core::label::segment_proof;
use procforge_core::verifier::{toy_step_prob, Aggregation, VerifierScore, PROB_EPSILON};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("scorer returned {got} probabilities for {want} steps")]
    ShapeMismatch { want: usize, got: usize },
}

pub trait StepScorer: Send + Sync {
    fn score(&self, prompt: &str, steps: &[String]) -> Result<Vec<f64>, ScorerError>;
}

/// The reference local scorer; see `toy_step_prob` for the formula.
pub struct ToyScorer;

impl StepScorer for ToyScorer {
    fn score(&self, _prompt: &str, steps: &[String]) -> Result<Vec<f64>, ScorerError> {
        Ok(steps.iter().map(|s| toy_step_prob(s)).collect())
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    steps: &'a [String],
}

#[derive(Deserialize)]
struct ScoreReply {
    p_correct: Vec<f64>,
}

pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(url: &str) -> Self {
        HttpScorer {
            url: url.to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(120))
                .build(),
        }
    }
}

impl StepScorer for HttpScorer {
    fn score(&self, prompt: &str, steps: &[String]) -> Result<Vec<f64>, ScorerError> {
        let reply: ScoreReply = self
            .agent
            .post(&self.url)
            .send_json(serde_json::to_value(ScoreRequest { prompt, steps }).unwrap())
            .map_err(|e| ScorerError::ScorerUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| ScorerError::ScorerUnavailable(format!("bad reply body: {e}")))?;
        if reply.p_correct.len() != steps.len() {
            return Err(ScorerError::ShapeMismatch {
                want: steps.len(),
                got: reply.p_correct.len(),
            });
        }
        Ok(reply.p_correct)
    }
}

/// Score every candidate with bounded parallelism. The batch is
/// all-or-nothing: any transport failure aborts it so no partial score file
/// is ever written. Negative candidates score ε without consulting the
/// backend — there is nothing to verify.
pub fn score_candidates(
    prompts: &HashMap<String, String>,
    candidates: &[Candidate],
    scorer: &dyn StepScorer,
    aggregation: Aggregation,
    max_in_flight: usize,
) -> Result<Vec<VerifierScore>, ScorerError> {
    let slots: Mutex<Vec<Option<Result<VerifierScore, ScorerError>>>> =
        Mutex::new((0..candidates.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(candidates.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= candidates.len() {
                    break;
                }
                let candidate = &candidates[idx];
                let outcome = if candidate.negative || candidate.text.trim().is_empty() {
                    Ok(VerifierScore::from_step_probs(
                        candidate.candidate_id.clone(),
                        vec![PROB_EPSILON],
                        aggregation,
                    ))
                } else {
                    let steps: Vec<String> = segment_proof(&candidate.text)
                        .into_iter()
                        .map(|s| s.text)
                        .collect();
                    let prompt = prompts
                        .get(&candidate.instance_id)
                        .map(String::as_str)
                        .unwrap_or("");
                    scorer.score(prompt, &steps).map(|probs| {
                        VerifierScore::from_step_probs(
                            candidate.candidate_id.clone(),
                            probs,
                            aggregation,
                        )
                    })
                };
                slots.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });

    let slots = slots.into_inner().unwrap();
    let mut scores = Vec::with_capacity(candidates.len());
    for slot in slots {
        scores.push(slot.expect("every candidate visited")?);
    }
    Ok(scores)
}
