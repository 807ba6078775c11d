//! Evaluation metrics: greedy compile rate, unbiased pass@k, MP1,
//! precision/recall, dataset statistics, and bootstrap intervals.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelRecord;
use crate::gateway::Candidate;
use crate::label::Label;
use crate::repl::{CompilationResult, CompileStatus};
use crate::rng::SplitMix64;
use crate::verifier::{select_mp1, VerifierScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassAtKInput {
    /// Samples generated per instance.
    pub n: u64,
    /// Compiled-success count among them.
    pub c: u64,
    pub k: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    Domain { reason: String },
    MissingResult { candidate_id: String },
    KeyMismatch { detail: String },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::Domain { reason } => write!(f, "domain error: {reason}"),
            MetricsError::MissingResult { candidate_id } => {
                write!(f, "no compilation result for candidate {candidate_id}")
            }
            MetricsError::KeyMismatch { detail } => write!(f, "key mismatch: {detail}"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Unbiased pass@k estimator: `1 - C(n-c, k) / C(n, k)`, computed as the
/// product `1 - Π_{i=n-c+1..n} (1 - k/i)` so nothing overflows at n = 20 or
/// far beyond.
pub fn pass_at_k(inp: &PassAtKInput) -> Result<f64, MetricsError> {
    let PassAtKInput { n, c, k } = *inp;
    if n == 0 {
        return Err(MetricsError::Domain {
            reason: "n must be >= 1".to_string(),
        });
    }
    if c > n {
        return Err(MetricsError::Domain {
            reason: alloc::format!("c = {c} exceeds n = {n}"),
        });
    }
    if k == 0 || k > n {
        return Err(MetricsError::Domain {
            reason: alloc::format!("k = {k} outside 1..={n}"),
        });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0f64;
    for i in (n - c + 1)..=n {
        miss *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - miss)
}

/// Fraction of temperature-0 results that compiled.
pub fn greedy_rate(results: &[CompilationResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let ok = results
        .iter()
        .filter(|r| r.status == CompileStatus::Success)
        .count();
    ok as f64 / results.len() as f64
}

/// Fraction of instances whose chosen candidate compiled.
pub fn mp1_rate(chosen: &[String], results: &[CompilationResult]) -> Result<f64, MetricsError> {
    if chosen.is_empty() {
        return Ok(0.0);
    }
    let by_id: BTreeMap<&str, CompileStatus> = results
        .iter()
        .map(|r| (r.candidate_id.as_str(), r.status))
        .collect();
    let mut wins = 0usize;
    for id in chosen {
        match by_id.get(id.as_str()) {
            Some(CompileStatus::Success) => wins += 1,
            Some(_) => {}
            None => {
                return Err(MetricsError::MissingResult {
                    candidate_id: id.clone(),
                })
            }
        }
    }
    Ok(wins as f64 / chosen.len() as f64)
}

/// Precision: of the candidates the verifier selected (predicted correct),
/// the fraction that compiled. Recall: of the candidates that compiled, the
/// fraction selected. A zero denominator reports as `None`, distinguishing
/// "nothing selected" from "everything selected was wrong".
pub fn precision_recall(
    scores: &[VerifierScore],
    results: &[CompilationResult],
) -> Result<(Option<f64>, Option<f64>), MetricsError> {
    let score_ids: BTreeSet<&str> = scores.iter().map(|s| s.candidate_id.as_str()).collect();
    let result_ids: BTreeSet<&str> = results.iter().map(|r| r.candidate_id.as_str()).collect();
    if score_ids != result_ids || score_ids.len() != scores.len() {
        return Err(MetricsError::KeyMismatch {
            detail: alloc::format!(
                "{} scored candidates vs {} results with differing ids",
                scores.len(),
                results.len()
            ),
        });
    }
    let success: BTreeSet<&str> = results
        .iter()
        .filter(|r| r.status == CompileStatus::Success)
        .map(|r| r.candidate_id.as_str())
        .collect();
    let selected: BTreeSet<&str> = scores
        .iter()
        .filter(|s| s.predicted_label == Label::Correct)
        .map(|s| s.candidate_id.as_str())
        .collect();
    let hit = selected.intersection(&success).count();
    let precision = if selected.is_empty() {
        None
    } else {
        Some(hit as f64 / selected.len() as f64)
    };
    let recall = if success.is_empty() {
        None
    } else {
        Some(hit as f64 / success.len() as f64)
    };
    Ok((precision, recall))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub median: f64,
    pub min: u64,
    pub max: u64,
}

/// Mean/median/min/max of a set of character counts. Median of an even
/// count is the average of the two middle values.
pub fn field_stats(values: &[u64]) -> Option<FieldStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<u64> = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    Some(FieldStats {
        mean,
        median,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

/// One row of the dataset statistics table: split name, size, and char
/// counts for the formal and natural-language sides. A natural-language-only
/// split reports no formal stats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStatsRow {
    pub split: String,
    pub size: usize,
    pub formal: Option<FieldStats>,
    pub nl: Option<FieldStats>,
}

pub fn dataset_stats(groups: &[(String, Vec<ParallelRecord>)]) -> Vec<SplitStatsRow> {
    groups
        .iter()
        .map(|(split, records)| {
            let formal: Vec<u64> = records
                .iter()
                .filter(|r| !r.theorem.statement.is_empty() || !r.theorem.proof.is_empty())
                .map(|r| r.theorem.char_count_formal as u64)
                .collect();
            let nl: Vec<u64> = records.iter().map(|r| r.char_count_nl as u64).collect();
            SplitStatsRow {
                split: split.clone(),
                size: records.len(),
                formal: field_stats(&formal),
                nl: field_stats(&nl),
            }
        })
        .collect()
}

/// Percentile bootstrap 95% interval for the mean of per-instance values.
/// Draw count and seed are pinned by the caller, so reruns reproduce the
/// interval exactly.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> Option<(f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = SplitMix64::new(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..values.len() {
            acc += values[rng.next_below(values.len())];
        }
        means.push(acc / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in bootstrap means"));
    let idx = |q: f64| -> usize {
        let pos = libm::round(q * (resamples - 1) as f64) as usize;
        pos.min(resamples - 1)
    };
    Some((means[idx(0.025)], means[idx(0.975)]))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub instances: usize,
    pub candidates: usize,
}

/// The full evaluation record for one candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Compile rate of the temperature-0 sample per instance; absent when no
    /// greedy results were supplied.
    pub greedy_rate: Option<f64>,
    pub pass_at: BTreeMap<u64, f64>,
    pub mp1: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fallback_rate: f64,
    pub counts: EvalCounts,
    /// Seeded instance-level bootstrap, 95% percentile interval per metric.
    pub ci_95: BTreeMap<String, (f64, f64)>,
}

pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            seed: 0,
        }
    }
}

/// Assemble an [`EvalReport`] from candidates (instance grouping), their
/// compile results, verifier scores, and optionally one greedy result per
/// instance.
pub fn build_eval_report(
    candidates: &[Candidate],
    results: &[CompilationResult],
    scores: &[VerifierScore],
    greedy: Option<&[CompilationResult]>,
    ks: &[u64],
    bootstrap: &BootstrapConfig,
) -> Result<EvalReport, MetricsError> {
    let result_by_id: BTreeMap<&str, &CompilationResult> = results
        .iter()
        .map(|r| (r.candidate_id.as_str(), r))
        .collect();
    let score_by_id: BTreeMap<&str, &VerifierScore> = scores
        .iter()
        .map(|s| (s.candidate_id.as_str(), s))
        .collect();

    // Group candidates per instance, preserving first-seen instance order.
    let mut instance_order: Vec<&str> = Vec::new();
    let mut by_instance: BTreeMap<&str, Vec<&Candidate>> = BTreeMap::new();
    for c in candidates {
        if !by_instance.contains_key(c.instance_id.as_str()) {
            instance_order.push(c.instance_id.as_str());
        }
        by_instance.entry(c.instance_id.as_str()).or_default().push(c);
    }

    let mut pass_values: BTreeMap<u64, Vec<f64>> = ks.iter().map(|&k| (k, Vec::new())).collect();
    let mut chosen: Vec<String> = Vec::new();
    let mut fallbacks = 0usize;

    for inst in &instance_order {
        let cands = &by_instance[inst];
        let n = cands.len() as u64;
        let mut c = 0u64;
        let mut inst_scores: Vec<VerifierScore> = Vec::with_capacity(cands.len());
        for cand in cands {
            let result = result_by_id.get(cand.candidate_id.as_str()).ok_or_else(|| {
                MetricsError::MissingResult {
                    candidate_id: cand.candidate_id.clone(),
                }
            })?;
            if result.status == CompileStatus::Success {
                c += 1;
            }
            let score = score_by_id.get(cand.candidate_id.as_str()).ok_or_else(|| {
                MetricsError::KeyMismatch {
                    detail: alloc::format!("candidate {} has no score", cand.candidate_id),
                }
            })?;
            inst_scores.push((*score).clone());
        }
        for (&k, values) in pass_values.iter_mut() {
            values.push(pass_at_k(&PassAtKInput { n, c, k })?);
        }
        let selection = select_mp1(&inst_scores).map_err(|_| MetricsError::Domain {
            reason: alloc::format!("instance {inst} has no candidates"),
        })?;
        if selection.fallback {
            fallbacks += 1;
        }
        chosen.push(selection.candidate_id);
    }

    let instances = instance_order.len();
    let mp1 = mp1_rate(&chosen, results)?;
    let (precision, recall) = precision_recall(scores, results)?;

    let mut ci_95 = BTreeMap::new();
    let mut pass_at = BTreeMap::new();
    for (k, values) in &pass_values {
        let rate = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        pass_at.insert(*k, rate);
        if let Some(ci) = bootstrap_mean_ci(values, bootstrap.resamples, bootstrap.seed ^ *k) {
            ci_95.insert(alloc::format!("pass@{k}"), ci);
        }
    }

    let greedy_rate_value = greedy.map(greedy_rate);
    if let Some(greedy_results) = greedy {
        let indicators: Vec<f64> = greedy_results
            .iter()
            .map(|r| {
                if r.status == CompileStatus::Success {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        if let Some(ci) = bootstrap_mean_ci(&indicators, bootstrap.resamples, bootstrap.seed) {
            ci_95.insert("greedy".to_string(), ci);
        }
    }

    Ok(EvalReport {
        greedy_rate: greedy_rate_value,
        pass_at,
        mp1,
        precision,
        recall,
        fallback_rate: if instances == 0 {
            0.0
        } else {
            fallbacks as f64 / instances as f64
        },
        counts: EvalCounts {
            instances,
            candidates: candidates.len(),
        },
        ci_95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn result(id: &str, status: CompileStatus) -> CompilationResult {
        CompilationResult {
            candidate_id: id.to_string(),
            status,
            diagnostics: vec![],
            env_line_offset: 0,
            elapsed_ms: 0,
        }
    }

    fn score_with(id: &str, p: f64) -> VerifierScore {
        VerifierScore::from_step_probs(id.to_string(), vec![p], Default::default())
    }

    #[test]
    fn pass_at_k_degenerate_cases() {
        assert_eq!(
            pass_at_k(&PassAtKInput { n: 20, c: 0, k: 7 }).unwrap(),
            0.0
        );
        assert_eq!(
            pass_at_k(&PassAtKInput { n: 20, c: 20, k: 5 }).unwrap(),
            1.0
        );
    }

    #[test]
    fn pass_at_k_exact_small_case() {
        // 1 - C(3,3)/C(5,3) = 1 - 1/10
        let p = pass_at_k(&PassAtKInput { n: 5, c: 2, k: 3 }).unwrap();
        assert_eq!(p, 0.9);
    }

    #[test]
    fn pass_at_k_domain_errors() {
        assert!(pass_at_k(&PassAtKInput { n: 0, c: 0, k: 1 }).is_err());
        assert!(pass_at_k(&PassAtKInput { n: 5, c: 6, k: 1 }).is_err());
        assert!(pass_at_k(&PassAtKInput { n: 5, c: 2, k: 0 }).is_err());
        assert!(pass_at_k(&PassAtKInput { n: 5, c: 2, k: 6 }).is_err());
    }

    #[test]
    fn greedy_rate_counts_successes() {
        assert_eq!(greedy_rate(&[]), 0.0);
        let all_bad: Vec<CompilationResult> = (0..10)
            .map(|i| result(&alloc::format!("c{i}"), CompileStatus::Failed))
            .collect();
        assert_eq!(greedy_rate(&all_bad), 0.0);
        let mut mixed = all_bad;
        for i in 0..10 {
            mixed.push(result(&alloc::format!("s{i}"), CompileStatus::Success));
        }
        assert_eq!(greedy_rate(&mixed), 0.5);
    }

    #[test]
    fn mp1_rate_fixture() {
        let results: Vec<CompilationResult> = (0..10)
            .map(|i| {
                result(
                    &alloc::format!("c{i}"),
                    if i < 6 {
                        CompileStatus::Success
                    } else {
                        CompileStatus::Failed
                    },
                )
            })
            .collect();
        let chosen: Vec<String> = (0..10).map(|i| alloc::format!("c{i}")).collect();
        assert_eq!(mp1_rate(&chosen, &results).unwrap(), 0.6);
        assert!(matches!(
            mp1_rate(&["missing".to_string()], &results),
            Err(MetricsError::MissingResult { .. })
        ));
    }

    #[test]
    fn precision_recall_set_example() {
        // selected = {A, B}, success = {B, C}
        let scores = vec![
            score_with("A", 0.9),
            score_with("B", 0.8),
            score_with("C", 0.1),
        ];
        let results = vec![
            result("A", CompileStatus::Failed),
            result("B", CompileStatus::Success),
            result("C", CompileStatus::Success),
        ];
        let (p, r) = precision_recall(&scores, &results).unwrap();
        assert_eq!(p, Some(0.5));
        assert_eq!(r, Some(0.5));
    }

    #[test]
    fn precision_none_when_nothing_selected() {
        let scores = vec![score_with("A", 0.1), score_with("B", 0.2)];
        let results = vec![
            result("A", CompileStatus::Success),
            result("B", CompileStatus::Failed),
        ];
        let (p, r) = precision_recall(&scores, &results).unwrap();
        assert_eq!(p, None);
        assert_eq!(r, Some(0.0));
    }

    #[test]
    fn precision_recall_key_mismatch() {
        let scores = vec![score_with("A", 0.9)];
        let results = vec![result("B", CompileStatus::Success)];
        assert!(matches!(
            precision_recall(&scores, &results),
            Err(MetricsError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn stats_single_record() {
        let stats = field_stats(&[210]).unwrap();
        assert_eq!(stats.mean, 210.0);
        assert_eq!(stats.median, 210.0);
        assert_eq!(stats.min, 210);
        assert_eq!(stats.max, 210);
    }

    #[test]
    fn stats_training_extremes() {
        let stats = field_stats(&[101, 179, 5515]).unwrap();
        assert_eq!(stats.min, 101);
        assert_eq!(stats.median, 179.0);
        assert_eq!(stats.max, 5515);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let values: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
        let a = bootstrap_mean_ci(&values, 1000, 9).unwrap();
        let b = bootstrap_mean_ci(&values, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.0 <= 0.5 && 0.5 <= a.1);
    }
}
