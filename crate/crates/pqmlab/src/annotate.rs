//! Monte-Carlo step annotation against the simulator.
//!
//! Each step is labeled by sampling k completions from a completer policy
//! conditioned on the step's latent state; the step is marked correct when
//! any completion reaches the gold answer. By the usual convention, every
//! step after the first hard failure is forced wrong without further
//! sampling; a flag restores full per-step sampling, which soft-label
//! targets need. Sub-seeds are derived per (trajectory, step, completion),
//! so annotation is deterministic regardless of worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{AnnotationExtension, CorpusRecord};
use crate::error::{Error, Result};
use crate::mdp::PolicyParams;
use crate::seed;
use crate::trajectory::{StepLabels, Trajectory};

const TAG_ANNOTATE: u64 = 4;

/// Completer policy, completion budget, and the first-error convention.
#[derive(Debug, Clone)]
pub struct AnnotationConfig {
    pub completer: PolicyParams,
    pub k_completions: usize,
    pub mark_after_first_error: bool,
    pub seed: u64,
}

impl AnnotationConfig {
    pub fn new(completer: PolicyParams, k_completions: usize, seed: u64) -> Result<Self> {
        if k_completions == 0 {
            return Err(Error::Config("k_completions must be >= 1".into()));
        }
        Ok(Self {
            completer,
            k_completions,
            mark_after_first_error: true,
            seed,
        })
    }

    pub fn with_mark_after_first_error(mut self, value: bool) -> Self {
        self.mark_after_first_error = value;
        self
    }
}

/// Outcome of annotating one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnotatedStep {
    /// Any completion succeeded.
    pub hard_label: bool,
    /// Success fraction n_success / k.
    pub soft_label: f64,
    pub n_success: usize,
}

fn completion_succeeds(
    completer: &PolicyParams,
    start_correct: bool,
    start_step: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    let mut state = start_correct;
    for _ in start_step..completer.horizon {
        let p = if state { completer.alpha } else { completer.beta };
        state = rng.random::<f64>() < p;
    }
    state
}

/// Annotate one trajectory. Returns the hard labels (with post-first-error
/// forcing when configured) and the per-step completion statistics.
pub fn annotate_trajectory(
    traj: &Trajectory,
    cfg: &AnnotationConfig,
) -> Result<(StepLabels, Vec<AnnotatedStep>)> {
    if traj.horizon() != cfg.completer.horizon {
        return Err(Error::Mismatch(format!(
            "trajectory {} has H={} but the completer's horizon is {}",
            traj.question_id,
            traj.horizon(),
            cfg.completer.horizon
        )));
    }
    let h = traj.horizon();
    let k = cfg.k_completions;
    let mut labels = Vec::with_capacity(h);
    let mut steps = Vec::with_capacity(h);
    let mut failed = false;
    for (i, step) in traj.steps.iter().enumerate() {
        let index = i + 1;
        if failed && cfg.mark_after_first_error {
            labels.push(false);
            steps.push(AnnotatedStep {
                hard_label: false,
                soft_label: 0.0,
                n_success: 0,
            });
            continue;
        }
        let latent = step.latent_correct.ok_or_else(|| Error::Invariant {
            field: "latent_correct".into(),
            message: format!(
                "trajectory {} step {index} lacks ground-truth latent state; \
                 annotation completions condition on it",
                traj.question_id
            ),
        })?;
        let mut n_success = 0;
        for j in 0..k {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_labeled(
                cfg.seed,
                &traj.question_id,
                &[TAG_ANNOTATE, index as u64, j as u64],
            ));
            if completion_succeeds(&cfg.completer, latent, index, &mut rng) {
                n_success += 1;
            }
        }
        let hard_label = n_success >= 1;
        labels.push(hard_label);
        steps.push(AnnotatedStep {
            hard_label,
            soft_label: n_success as f64 / k as f64,
            n_success,
        });
        if !hard_label {
            failed = true;
        }
    }
    Ok((StepLabels::new(labels)?, steps))
}

/// Annotate a record in place: the label field becomes the annotated labels
/// and the per-step statistics are attached as the annotation extension.
/// Ground truth stays available through the steps' latent states.
pub fn annotate_record(record: &CorpusRecord, cfg: &AnnotationConfig) -> Result<CorpusRecord> {
    let (labels, steps) = annotate_trajectory(&record.trajectory, cfg)?;
    let extension = AnnotationExtension {
        soft_labels: steps.iter().map(|s| s.soft_label).collect(),
        n_success: steps.iter().map(|s| s.n_success).collect(),
        k: cfg.k_completions,
    };
    CorpusRecord::new(record.trajectory.clone(), labels)?.with_annotation(extension)
}

/// Counts behind a precision/recall pair at one step position.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PositionStats {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl PositionStats {
    pub fn precision(&self) -> Option<f64> {
        let denom = self.true_positive + self.false_positive;
        (denom > 0).then(|| self.true_positive as f64 / denom as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let denom = self.true_positive + self.false_negative;
        (denom > 0).then(|| self.true_positive as f64 / denom as f64)
    }
}

/// Annotation quality against ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseReport {
    /// Indexed by step position (0-based position t-1).
    pub per_position: Vec<PositionStats>,
    pub overall: PositionStats,
    /// Fraction of steps whose hard label matches ground truth.
    pub agreement: f64,
    /// Binomial standard error of `agreement`.
    pub agreement_std_error: f64,
    pub steps_total: usize,
    /// Fraction of trajectories whose annotated first error matches the
    /// ground-truth first error (including both being absent).
    pub first_error_accuracy: f64,
    /// Steps forced false by the first-error convention.
    pub forced_false_total: usize,
    /// Forced-false steps whose ground truth is actually correct.
    pub forced_false_contradictions: usize,
}

impl NoiseReport {
    pub fn forced_false_contradiction_rate(&self) -> f64 {
        if self.forced_false_total == 0 {
            0.0
        } else {
            self.forced_false_contradictions as f64 / self.forced_false_total as f64
        }
    }
}

/// Run the annotation pipeline over a corpus and score the produced hard
/// labels against the ground-truth latent states.
pub fn annotation_noise_report(
    corpus: &[CorpusRecord],
    cfg: &AnnotationConfig,
) -> Result<NoiseReport> {
    if corpus.is_empty() {
        return Err(Error::Domain("noise report over an empty corpus".into()));
    }
    let horizon = cfg.completer.horizon;
    let mut per_position = vec![PositionStats::default(); horizon];
    let mut overall = PositionStats::default();
    let mut agree = 0usize;
    let mut steps_total = 0usize;
    let mut first_error_hits = 0usize;
    let mut forced_false_total = 0usize;
    let mut forced_false_contradictions = 0usize;

    for record in corpus {
        let truth: Vec<bool> = record
            .trajectory
            .steps
            .iter()
            .map(|s| {
                s.latent_correct.ok_or_else(|| Error::Invariant {
                    field: "latent_correct".into(),
                    message: format!(
                        "trajectory {} lacks ground truth; the noise report needs it",
                        record.trajectory.question_id
                    ),
                })
            })
            .collect::<Result<_>>()?;
        let truth_labels = StepLabels::new(truth.clone())?;
        let (annotated, _) = annotate_trajectory(&record.trajectory, cfg)?;

        if annotated.first_error == truth_labels.first_error {
            first_error_hits += 1;
        }
        let forced_from = if cfg.mark_after_first_error {
            annotated.first_error.map(|e| e + 1)
        } else {
            None
        };
        for (i, (&predicted, &actual)) in annotated.labels.iter().zip(&truth).enumerate() {
            let stats = &mut per_position[i];
            match (predicted, actual) {
                (true, true) => stats.true_positive += 1,
                (true, false) => stats.false_positive += 1,
                (false, true) => stats.false_negative += 1,
                (false, false) => stats.true_negative += 1,
            }
            steps_total += 1;
            if predicted == actual {
                agree += 1;
            }
            if let Some(from) = forced_from {
                if i + 1 >= from {
                    forced_false_total += 1;
                    if actual {
                        forced_false_contradictions += 1;
                    }
                }
            }
        }
    }
    for stats in &per_position {
        overall.true_positive += stats.true_positive;
        overall.false_positive += stats.false_positive;
        overall.false_negative += stats.false_negative;
        overall.true_negative += stats.true_negative;
    }
    let agreement = agree as f64 / steps_total as f64;
    Ok(NoiseReport {
        per_position,
        overall,
        agreement,
        agreement_std_error: (agreement * (1.0 - agreement) / steps_total as f64).sqrt(),
        steps_total,
        first_error_accuracy: first_error_hits as f64 / corpus.len() as f64,
        forced_false_total,
        forced_false_contradictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectory, PolicyParams};

    fn params(alpha: f64, beta: f64, horizon: usize) -> PolicyParams {
        PolicyParams::new(alpha, beta, horizon, 0.3, 3).unwrap()
    }

    fn simulated_corpus(env: &PolicyParams, n: usize, seed: u64) -> Vec<CorpusRecord> {
        (0..n)
            .map(|i| {
                let (t, l) = sample_trajectory(env, &format!("q{i}"), seed);
                CorpusRecord::new(t, l).unwrap()
            })
            .collect()
    }

    #[test]
    fn perfect_completer_recovers_ground_truth() {
        // A completer that never recovers and never fails from a correct
        // state labels every step by its exact latent state, for any k.
        let completer = params(1.0, 0.0, 5);
        for k in [1, 4, 16] {
            let cfg = AnnotationConfig::new(completer, k, 9)
                .unwrap()
                .with_mark_after_first_error(false);
            let env = params(0.8, 0.2, 5);
            for record in simulated_corpus(&env, 20, 7) {
                let (labels, steps) = annotate_trajectory(&record.trajectory, &cfg).unwrap();
                let truth: Vec<bool> = record
                    .trajectory
                    .steps
                    .iter()
                    .map(|s| s.latent_correct.unwrap())
                    .collect();
                assert_eq!(labels.labels, truth);
                for (i, s) in steps.iter().enumerate() {
                    assert_eq!(s.hard_label, truth[i]);
                    assert_eq!(s.soft_label, if truth[i] { 1.0 } else { 0.0 });
                }
            }
        }

        // With forcing on, the identity still holds whenever the data
        // environment cannot recover either.
        let cfg = AnnotationConfig::new(completer, 4, 9).unwrap();
        let env = params(0.8, 0.0, 5);
        for record in simulated_corpus(&env, 20, 7) {
            let (labels, _) = annotate_trajectory(&record.trajectory, &cfg).unwrap();
            let truth: Vec<bool> = record
                .trajectory
                .steps
                .iter()
                .map(|s| s.latent_correct.unwrap())
                .collect();
            assert_eq!(labels.labels, truth);
        }
    }

    #[test]
    fn zero_recovery_completer_marks_wrong_steps_false() {
        let env = params(0.5, 0.5, 6);
        let cfg = AnnotationConfig::new(params(0.9, 0.0, 6), 16, 3).unwrap();
        for record in simulated_corpus(&env, 30, 21) {
            let (labels, _) = annotate_trajectory(&record.trajectory, &cfg).unwrap();
            for (i, step) in record.trajectory.steps.iter().enumerate() {
                if !step.latent_correct.unwrap() {
                    assert!(!labels.labels[i], "wrong step {} marked correct", i + 1);
                }
            }
        }
    }

    #[test]
    fn forcing_yields_monotone_falsity_and_skips_sampling() {
        let env = params(0.6, 0.4, 6);
        let cfg = AnnotationConfig::new(params(0.8, 0.0, 6), 8, 5).unwrap();
        for record in simulated_corpus(&env, 30, 13) {
            let (labels, steps) = annotate_trajectory(&record.trajectory, &cfg).unwrap();
            assert!(labels.monotone_falsity());
            if let Some(e) = labels.first_error {
                for s in &steps[e..] {
                    assert_eq!(s.n_success, 0);
                    assert_eq!(s.soft_label, 0.0);
                }
            }
        }
    }

    #[test]
    fn annotation_is_deterministic() {
        let env = params(0.7, 0.2, 5);
        let cfg = AnnotationConfig::new(params(0.85, 0.1, 5), 8, 11).unwrap();
        let record = &simulated_corpus(&env, 1, 2)[0];
        let a = annotate_trajectory(&record.trajectory, &cfg).unwrap();
        let b = annotate_trajectory(&record.trajectory, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let env = params(0.7, 0.2, 5);
        let cfg = AnnotationConfig::new(params(0.85, 0.1, 4), 8, 11).unwrap();
        let record = &simulated_corpus(&env, 1, 2)[0];
        assert!(annotate_trajectory(&record.trajectory, &cfg).is_err());
    }

    #[test]
    fn hard_and_soft_labels_are_consistent() {
        let env = params(0.7, 0.3, 6);
        let cfg = AnnotationConfig::new(params(0.8, 0.15, 6), 8, 17).unwrap();
        for record in simulated_corpus(&env, 40, 23) {
            let (_, steps) = annotate_trajectory(&record.trajectory, &cfg).unwrap();
            for s in steps {
                assert_eq!(s.hard_label, s.n_success >= 1);
                assert!((s.soft_label - s.n_success as f64 / 8.0).abs() < 1e-15);
                if s.hard_label {
                    assert!(s.soft_label > 0.0);
                }
                if s.soft_label == 1.0 {
                    assert!(s.hard_label);
                }
            }
        }
    }

    #[test]
    fn noise_report_perfect_completer() {
        let env = params(1.0, 0.0, 5);
        let cfg = AnnotationConfig::new(params(1.0, 0.0, 5), 4, 9).unwrap();
        let corpus = simulated_corpus(&env, 25, 31);
        let report = annotation_noise_report(&corpus, &cfg).unwrap();
        assert_eq!(report.overall.precision(), Some(1.0));
        assert_eq!(report.agreement, 1.0);
        assert_eq!(report.first_error_accuracy, 1.0);
    }

    #[test]
    fn forcing_creates_contradictions_in_recovering_environments() {
        // beta = 0.3 guarantees recoverable wrong states; a zero-recovery
        // completer pins the first error, and forcing then contradicts the
        // recovered ground truth downstream.
        let env = params(0.7, 0.3, 8);
        let completer = params(0.9, 0.0, 8);
        let corpus = simulated_corpus(&env, 200, 41);
        let forced = AnnotationConfig::new(completer, 8, 5).unwrap();
        let unforced = forced.clone().with_mark_after_first_error(false);
        let report_forced = annotation_noise_report(&corpus, &forced).unwrap();
        let report_unforced = annotation_noise_report(&corpus, &unforced).unwrap();
        assert_eq!(report_unforced.forced_false_total, 0);
        assert!(report_forced.forced_false_contradictions > 0);
    }

    #[test]
    fn noise_report_rejects_empty_and_unlabeled_corpora() {
        let cfg = AnnotationConfig::new(params(0.9, 0.1, 3), 4, 1).unwrap();
        assert!(annotation_noise_report(&[], &cfg).is_err());

        let env = params(0.9, 0.1, 3);
        let mut corpus = simulated_corpus(&env, 2, 3);
        for step in &mut corpus[1].trajectory.steps {
            step.latent_correct = None;
        }
        assert!(annotation_noise_report(&corpus, &cfg).is_err());
    }
}
