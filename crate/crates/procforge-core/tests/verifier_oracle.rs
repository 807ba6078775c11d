//! Independent oracles for the verifier: loss-equality regime, gradient
//! finite differences, a reimplementation of the toy scorer formula, and a
//! brute-force selection rule.

use procforge_core::label::{Label, LabelScheme, StepLabels};
use procforge_core::rng::SplitMix64;
use procforge_core::verifier::{
    loss_grad_wrt_step_prob, loss_osv, loss_psv, select_mp1, toy_step_prob, Aggregation,
    VerifierScore, TOY_TACTIC_WHITELIST,
};

fn labels(id: &str, scheme: LabelScheme, ls: Vec<Label>) -> StepLabels {
    StepLabels {
        candidate_id: id.to_string(),
        scheme,
        labels: ls,
        first_error_step: None,
    }
}

fn random_batch(
    rng: &mut SplitMix64,
    constant_labels: bool,
) -> (Vec<VerifierScore>, Vec<StepLabels>, Vec<StepLabels>) {
    let n = 1 + rng.next_below(8);
    let mut scores = Vec::new();
    let mut process = Vec::new();
    let mut outcome = Vec::new();
    for i in 0..n {
        let m = 1 + rng.next_below(6);
        let probs: Vec<f64> = (0..m).map(|_| 0.01 + 0.98 * rng.next_f64()).collect();
        let id = format!("c{i}");
        scores.push(VerifierScore::from_step_probs(
            id.clone(),
            probs,
            Aggregation::Min,
        ));
        let sample_ok = rng.next_below(2) == 0;
        let process_labels: Vec<Label> = if constant_labels {
            vec![if sample_ok { Label::Correct } else { Label::Incorrect }; m]
        } else {
            let first_err = rng.next_below(m + 1);
            (0..m)
                .map(|t| if t < first_err { Label::Correct } else { Label::Incorrect })
                .collect()
        };
        let outcome_label = if process_labels.iter().all(|&l| l == Label::Correct) {
            Label::Correct
        } else {
            Label::Incorrect
        };
        process.push(labels(&id, LabelScheme::Process, process_labels));
        outcome.push(labels(&id, LabelScheme::Outcome, vec![outcome_label; m]));
    }
    (scores, process, outcome)
}

#[test]
fn psv_equals_osv_when_process_labels_are_constant() {
    let mut rng = SplitMix64::new(0x105e);
    for _ in 0..1000 {
        let (scores, process, outcome) = random_batch(&mut rng, true);
        let psv = loss_psv(&scores, &process).unwrap().value;
        let osv = loss_osv(&scores, &outcome).unwrap().value;
        assert!(
            (psv - osv).abs() < 1e-12,
            "constant-label regime must collapse the losses: {psv} vs {osv}"
        );
    }
}

#[test]
fn losses_differ_when_labels_are_mixed() {
    // sanity that the equality above is not vacuous
    let mut rng = SplitMix64::new(0xbeef);
    let mut diverged = false;
    for _ in 0..100 {
        let (scores, process, outcome) = random_batch(&mut rng, false);
        let psv = loss_psv(&scores, &process).unwrap().value;
        let osv = loss_osv(&scores, &outcome).unwrap().value;
        if (psv - osv).abs() > 1e-9 {
            diverged = true;
            break;
        }
    }
    assert!(diverged);
}

#[test]
fn analytic_half_probability_loss() {
    let scores = [VerifierScore::from_step_probs(
        "a".into(),
        vec![0.5],
        Aggregation::Min,
    )];
    let lab = [labels("a", LabelScheme::Process, vec![Label::Correct])];
    let report = loss_psv(&scores, &lab).unwrap();
    assert!((report.value - core::f64::consts::LN_2).abs() < 1e-9);
    assert!((report.value - 0.693147).abs() < 1e-6);
}

#[test]
fn finite_difference_matches_closed_form_gradient() {
    let mut rng = SplitMix64::new(0x97ad);
    let h = 1e-5;
    for _ in 0..100 {
        let (scores, process, _) = random_batch(&mut rng, false);
        let n = scores.len();
        let i = rng.next_below(n);
        let m_i = scores[i].step_probs.len();
        let t = rng.next_below(m_i);

        // keep the probe point away from the clamp boundaries
        let r = 0.05 + 0.9 * rng.next_f64();
        let mut base = scores.clone();
        base[i].step_probs[t] = r;
        let mut bumped = base.clone();
        bumped[i].step_probs[t] = r + h;

        let l0 = loss_psv(&base, &process).unwrap().value;
        let l1 = loss_psv(&bumped, &process).unwrap().value;
        let delta = l1 - l0;

        let label = process
            .iter()
            .find(|l| l.candidate_id == base[i].candidate_id)
            .unwrap()
            .labels[t];
        let grad = loss_grad_wrt_step_prob(n, m_i, r, label);
        assert!(
            (delta - grad * h).abs() < 1e-7,
            "fd {delta:.3e} vs closed form {:.3e}",
            grad * h
        );
    }
}

#[test]
fn toy_scorer_matches_reimplementation_on_fifty_candidates() {
    // an independent transcription of the documented formula
    fn oracle(step: &str) -> f64 {
        let len = step.chars().count() as f64;
        let tokens: Vec<String> = step
            .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '\''))
            .filter(|t| !t.is_empty())
            .map(|t| t.to_string())
            .collect();
        let unknown = tokens
            .iter()
            .filter(|t| {
                t.chars()
                    .next()
                    .map(|c| c.is_alphabetic() || c == '_')
                    .unwrap_or(false)
                    && !TOY_TACTIC_WHITELIST.contains(&t.as_str())
            })
            .count() as f64;
        1.0 / (1.0 + (-(3.0 + (-0.02) * len + (-0.9) * unknown)).exp())
    }

    let pool = [
        "rfl",
        "simp",
        "norm_num",
        "ring",
        "exact h",
        "rw [Nat.add_comm]",
        "apply mul_comm",
        "exact ⟨h1, h2⟩",
        "obscure_invocation alpha beta",
        "my_custom_lemma_application x y z",
        "sorry",
        "linarith [h1, h2, h3]",
        "cases h with | inl a => exact a | inr b => exact b.elim",
        "simp only [List.map, Function.comp]",
        "exact absurd h (lt_irrefl 0)",
    ];
    let mut rng = SplitMix64::new(50);
    for i in 0..50 {
        let a = pool[rng.next_below(pool.len())];
        let b = pool[rng.next_below(pool.len())];
        let step = if i % 3 == 0 { format!("{a}; {b}") } else { a.to_string() };
        let got = toy_step_prob(&step);
        let want = oracle(&step);
        assert!(
            (got - want).abs() < 1e-12,
            "step {step:?}: {got} vs oracle {want}"
        );
    }
}

#[test]
fn selection_matches_brute_force_on_200_random_sets() {
    let mut rng = SplitMix64::new(0x5e7);
    for _ in 0..200 {
        let n = 1 + rng.next_below(12);
        let scores: Vec<VerifierScore> = (0..n)
            .map(|i| {
                let m = 1 + rng.next_below(4);
                let probs: Vec<f64> = (0..m).map(|_| rng.next_f64()).collect();
                VerifierScore::from_step_probs(format!("cand{i:02}"), probs, Aggregation::Min)
            })
            .collect();

        // brute force: apply the stated rule naively
        let correct: Vec<&VerifierScore> = scores
            .iter()
            .filter(|s| s.predicted_label == Label::Correct)
            .collect();
        let pool: Vec<&VerifierScore> = if correct.is_empty() {
            scores.iter().collect()
        } else {
            correct
        };
        let mut best = pool[0];
        for s in &pool[1..] {
            if s.sample_score > best.sample_score
                || (s.sample_score == best.sample_score && s.candidate_id < best.candidate_id)
            {
                best = s;
            }
        }

        let got = select_mp1(&scores).unwrap();
        assert_eq!(got.candidate_id, best.candidate_id);
        assert_eq!(
            got.fallback,
            scores.iter().all(|s| s.predicted_label == Label::Incorrect)
        );
    }
}
