//! Synthetic deterministic-MDP reasoning environment.
//!
//! The environment is a two-state latent Markov chain over step correctness:
//! a correct state continues correctly with probability `alpha`, a wrong
//! state recovers with probability `beta`. The bare question counts as a
//! correct state, success is latent correctness at step H, and the final
//! answer token is the gold token on success or a uniform distractor
//! otherwise. Because the chain is so small, the optimal Q-function of
//! every state is exactly computable by backward recursion, which gives the
//! trajectory sampler an exact oracle to validate against.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{Step, StepLabels, Trajectory};

/// Feature vector layout emitted by the sampler: four class-conditional
/// coordinates, one prefix-cumulative statistic, one position coordinate.
pub const FEATURE_DIM: usize = 6;
const CLASS_COORDS: usize = 4;
/// Class-conditional means are +/- this value per coordinate, giving unit
/// L2 separation between the two class means.
const CLASS_MEAN: f64 = 0.25;

/// Gold answer token; distractors are `a1..=aK`.
pub const GOLD_ANSWER: &str = "a0";

const TAG_QUESTION_PARAMS: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_ASSUMPTION: u64 = 3;

/// Latent correctness-transition propensities of a synthetic policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// P(next step correct | current state correct).
    pub alpha: f64,
    /// P(next step correct | current state wrong) — recovery propensity.
    pub beta: f64,
    pub horizon: usize,
    pub feature_noise: f64,
    pub distractor_count: usize,
}

impl PolicyParams {
    pub fn new(
        alpha: f64,
        beta: f64,
        horizon: usize,
        feature_noise: f64,
        distractor_count: usize,
    ) -> Result<Self> {
        for (name, p) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if feature_noise.is_nan() || feature_noise < 0.0 {
            return Err(Error::Config(format!(
                "feature_noise must be >= 0, got {feature_noise}"
            )));
        }
        if distractor_count == 0 {
            return Err(Error::Config("distractor_count must be >= 1".into()));
        }
        Ok(Self {
            alpha,
            beta,
            horizon,
            feature_noise,
            distractor_count,
        })
    }

    /// Whether the strict conditions behind the Q-ranking hold: the next
    /// step from a correct state is more likely correct than wrong
    /// (alpha > 1 - alpha) and success is likelier from correct states than
    /// from wrong ones at every distance to the horizon (alpha > beta).
    pub fn assumption_satisfied(&self) -> bool {
        self.alpha > 0.5 && self.alpha > self.beta
    }
}

/// Named policy presets of increasing quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyPreset {
    Novice,
    Adept,
    Expert,
}

impl PolicyPreset {
    pub fn alpha_beta(self) -> (f64, f64) {
        match self {
            PolicyPreset::Novice => (0.70, 0.05),
            PolicyPreset::Adept => (0.80, 0.10),
            PolicyPreset::Expert => (0.90, 0.12),
        }
    }

    pub fn all() -> [PolicyPreset; 3] {
        [PolicyPreset::Novice, PolicyPreset::Adept, PolicyPreset::Expert]
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyPreset::Novice => "novice",
            PolicyPreset::Adept => "adept",
            PolicyPreset::Expert => "expert",
        }
    }
}

impl std::str::FromStr for PolicyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "novice" => Ok(PolicyPreset::Novice),
            "adept" => Ok(PolicyPreset::Adept),
            "expert" => Ok(PolicyPreset::Expert),
            other => Err(Error::Config(format!(
                "unknown policy preset {other:?} (expected novice, adept, or expert)"
            ))),
        }
    }
}

/// Exact success probabilities for every (step index, correctness) state.
///
/// Entries live in the sigmoid domain, i.e. they are probabilities; raw
/// Q-values are their logits, with signed-infinite sentinels at 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QOracleTable {
    /// q_correct[t-1] = P(success | correct state after step t), t = 1..=H.
    pub q_correct: Vec<f64>,
    /// q_wrong[t-1] = P(success | wrong state after step t), t = 1..=H.
    pub q_wrong: Vec<f64>,
    /// Success probability from the bare question.
    pub v_root: f64,
}

impl QOracleTable {
    pub fn horizon(&self) -> usize {
        self.q_correct.len()
    }

    /// Sigmoid-domain Q at a 1-based step index and correctness.
    pub fn q_sigma(&self, t: usize, correct: bool) -> f64 {
        if correct {
            self.q_correct[t - 1]
        } else {
            self.q_wrong[t - 1]
        }
    }

    /// Raw (logit-domain) Q; ±∞ sentinels at probabilities 0 and 1.
    pub fn q_raw(&self, t: usize, correct: bool) -> f64 {
        crate::numerics::logit(self.q_sigma(t, correct))
    }

    /// Exact per-step sigma-domain scores for a labeled trajectory.
    pub fn sigma_scores(&self, labels: &StepLabels) -> Vec<f64> {
        labels
            .labels
            .iter()
            .enumerate()
            .map(|(i, &c)| self.q_sigma(i + 1, c))
            .collect()
    }

    /// Exact per-step raw scores for a labeled trajectory.
    pub fn raw_scores(&self, labels: &StepLabels) -> Vec<f64> {
        labels
            .labels
            .iter()
            .enumerate()
            .map(|(i, &c)| self.q_raw(i + 1, c))
            .collect()
    }
}

/// Exact optimal Q-table by backward recursion over the latent chain.
///
/// With k steps remaining, the success probabilities from a correct / wrong
/// state satisfy f_k = a·f_{k-1} + (1-a)·g_{k-1} and
/// g_k = b·f_{k-1} + (1-b)·g_{k-1} with f_0 = 1, g_0 = 0; the table entry at
/// step t uses k = H - t and the root value is f_H.
pub fn exact_q_table(params: &PolicyParams) -> QOracleTable {
    let h = params.horizon;
    let (a, b) = (params.alpha, params.beta);
    let mut f = vec![0.0; h + 1];
    let mut g = vec![0.0; h + 1];
    f[0] = 1.0;
    g[0] = 0.0;
    for k in 1..=h {
        f[k] = a * f[k - 1] + (1.0 - a) * g[k - 1];
        g[k] = b * f[k - 1] + (1.0 - b) * g[k - 1];
    }
    let q_correct = (1..=h).map(|t| f[h - t]).collect();
    let q_wrong = (1..=h).map(|t| g[h - t]).collect();
    QOracleTable {
        q_correct,
        q_wrong,
        v_root: f[h],
    }
}

/// Maximum horizon accepted by the brute-force enumerator.
pub const BRUTE_FORCE_MAX_HORIZON: usize = 20;

/// Success probability by exhaustive enumeration of all 2^(H-t) latent
/// continuations — the independent oracle against [`exact_q_table`].
///
/// `t = 0` means the bare question (a correct state).
pub fn brute_force_q(params: &PolicyParams, t: usize, correct: bool) -> Result<f64> {
    let h = params.horizon;
    if h > BRUTE_FORCE_MAX_HORIZON {
        return Err(Error::Refused(format!(
            "horizon {h} exceeds the enumeration guard of {BRUTE_FORCE_MAX_HORIZON}"
        )));
    }
    if t > h {
        return Err(Error::Domain(format!("step index {t} exceeds horizon {h}")));
    }
    if t == 0 && !correct {
        return Err(Error::Domain(
            "the bare question is a correct state; t=0 with correct=false is undefined".into(),
        ));
    }
    let remaining = h - t;
    if remaining == 0 {
        return Ok(if correct { 1.0 } else { 0.0 });
    }
    let mut total = 0.0;
    for mask in 0u64..(1u64 << remaining) {
        let mut state = correct;
        let mut prob = 1.0;
        for bit in 0..remaining {
            let next = (mask >> bit) & 1 == 1;
            let p_correct = if state { params.alpha } else { params.beta };
            prob *= if next { p_correct } else { 1.0 - p_correct };
            state = next;
        }
        if state {
            total += prob;
        }
    }
    Ok(total)
}

fn trajectory_rng(params_seed: u64, question_id: &str, candidate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed::derive_labeled(
        params_seed,
        question_id,
        &[TAG_SAMPLE, candidate],
    ))
}

/// Sample one trajectory with its ground-truth labels, fully deterministic
/// given `(params, question_id, seed)`.
pub fn sample_trajectory(
    params: &PolicyParams,
    question_id: &str,
    master_seed: u64,
) -> (Trajectory, StepLabels) {
    sample_candidate(params, question_id, 0, master_seed)
}

/// Sample the `candidate`-th trajectory of a question's pool. Candidate 0
/// coincides with [`sample_trajectory`].
pub fn sample_candidate(
    params: &PolicyParams,
    question_id: &str,
    candidate: u64,
    master_seed: u64,
) -> (Trajectory, StepLabels) {
    let mut rng = trajectory_rng(master_seed, question_id, candidate);
    let h = params.horizon;
    let mut steps = Vec::with_capacity(h);
    let mut labels = Vec::with_capacity(h);
    let mut state = true;
    let mut prefix_sum = 0.0;
    for t in 1..=h {
        let p_correct = if state { params.alpha } else { params.beta };
        state = rng.random::<f64>() < p_correct;
        labels.push(state);

        let mean = if state { CLASS_MEAN } else { -CLASS_MEAN };
        let mut features = Vec::with_capacity(FEATURE_DIM);
        let mut class_sum = 0.0;
        for _ in 0..CLASS_COORDS {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let value = mean + params.feature_noise * noise;
            class_sum += value;
            features.push(value);
        }
        prefix_sum += class_sum / CLASS_COORDS as f64;
        // Prefix-cumulative statistic and position: the observable stand-in
        // for the autoregressive context.
        features.push(prefix_sum / t as f64);
        features.push(t as f64 / h as f64);
        steps.push(Step {
            index: t,
            features,
            latent_correct: Some(state),
        });
    }
    let final_answer = if state {
        GOLD_ANSWER.to_string()
    } else {
        let d = rng.random_range(1..=params.distractor_count);
        format!("a{d}")
    };
    let trajectory = Trajectory::new(question_id, steps, final_answer, GOLD_ANSWER)
        .expect("sampler emits valid trajectories");
    let labels = StepLabels::new(labels).expect("sampler emits H >= 1 labels");
    (trajectory, labels)
}

/// A Monte-Carlo rate with its binomial standard error and the exact value
/// it estimates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
    pub expected: f64,
}

impl RateEstimate {
    fn from_counts(successes: usize, draws: usize, expected: f64) -> Self {
        let estimate = successes as f64 / draws as f64;
        let std_error = (estimate * (1.0 - estimate) / draws as f64).sqrt();
        Self {
            estimate,
            std_error,
            draws,
            expected,
        }
    }

    /// |estimate − expected| measured in standard errors (∞-safe).
    pub fn sigma_deviation(&self) -> f64 {
        let diff = (self.estimate - self.expected).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error.max(f64::MIN_POSITIVE)
        }
    }
}

/// Empirical validation of the correct-state dominance assumption.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub next_correct_given_correct: RateEstimate,
    pub next_correct_given_wrong: RateEstimate,
    pub success_given_correct: RateEstimate,
    pub success_given_wrong: RateEstimate,
}

impl AssumptionReport {
    pub fn estimates(&self) -> [&RateEstimate; 4] {
        [
            &self.next_correct_given_correct,
            &self.next_correct_given_wrong,
            &self.success_given_correct,
            &self.success_given_wrong,
        ]
    }

    pub fn max_sigma_deviation(&self) -> f64 {
        self.estimates()
            .iter()
            .map(|e| e.sigma_deviation())
            .fold(0.0, f64::max)
    }

    /// True when every estimate is within `n_sigma` standard errors of its
    /// exact value.
    pub fn within(&self, n_sigma: f64) -> bool {
        self.estimates()
            .iter()
            .all(|e| (e.estimate - e.expected).abs() <= n_sigma * e.std_error)
    }
}

/// Monte-Carlo check of the dominance assumption against the exact oracle.
///
/// States are sampled on a balanced grid: a step count t is drawn uniformly
/// and the state correctness alternates (the chain is Markov, so the
/// conditional rates do not depend on how a state was reached; conditioning
/// directly keeps both buckets populated even when one is unreachable from
/// the root by simulation). Each state gets `n_rollouts` completions; the
/// report pools next-step and full-trajectory success rates per bucket and
/// pairs them with the exact values from [`exact_q_table`].
pub fn validate_assumption(
    params: &PolicyParams,
    n_states: usize,
    n_rollouts: usize,
    master_seed: u64,
) -> Result<AssumptionReport> {
    if n_states == 0 || n_rollouts == 0 {
        return Err(Error::Domain(
            "Monte-Carlo budget must be positive (n_states >= 1, n_rollouts >= 1)".into(),
        ));
    }
    let table = exact_q_table(params);
    let h = params.horizon;

    // [correct bucket, wrong bucket]
    let mut next_hits = [0usize; 2];
    let mut success_hits = [0usize; 2];
    let mut draws = [0usize; 2];
    let mut expected_success_sum = [0.0f64; 2];
    let mut expected_states = [0usize; 2];

    for i in 0..n_states {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
            master_seed,
            &[TAG_ASSUMPTION, i as u64],
        ));
        let correct = i % 2 == 0;
        // Wrong states only exist after at least one step.
        let t = if correct {
            rng.random_range(0..h)
        } else if h == 1 {
            // Horizon 1 has no interior wrong state with a next step; fall
            // back to a correct root state so the budget is still spent.
            0
        } else {
            rng.random_range(1..h)
        };
        let correct = correct || t == 0;
        let bucket = usize::from(!correct);
        let expected_success = if t == 0 {
            table.v_root
        } else {
            table.q_sigma(t, correct)
        };
        expected_success_sum[bucket] += expected_success;
        expected_states[bucket] += 1;

        for _ in 0..n_rollouts {
            let mut state = correct;
            let mut first = None;
            for _ in t..h {
                let p = if state { params.alpha } else { params.beta };
                state = rng.random::<f64>() < p;
                if first.is_none() {
                    first = Some(state);
                }
            }
            draws[bucket] += 1;
            if first.expect("t < h guarantees at least one transition") {
                next_hits[bucket] += 1;
            }
            if state {
                success_hits[bucket] += 1;
            }
        }
    }

    let bucket_report = |bucket: usize, hits: &[usize; 2], expected: f64| {
        RateEstimate::from_counts(hits[bucket], draws[bucket].max(1), expected)
    };
    let mean_expected = |bucket: usize| {
        if expected_states[bucket] == 0 {
            0.0
        } else {
            expected_success_sum[bucket] / expected_states[bucket] as f64
        }
    };
    Ok(AssumptionReport {
        next_correct_given_correct: bucket_report(0, &next_hits, params.alpha),
        next_correct_given_wrong: bucket_report(1, &next_hits, params.beta),
        success_given_correct: bucket_report(0, &success_hits, mean_expected(0)),
        success_given_wrong: bucket_report(1, &success_hits, mean_expected(1)),
    })
}

/// A node of the theoretical Q-value ranking chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "step")]
pub enum ChainNode {
    /// A wrong step at the given 1-based index.
    Wrong(usize),
    /// The bare question, Q_0 = V(x).
    Root,
    /// A correct step at the given 1-based index.
    Correct(usize),
}

/// One violated pairwise inequality of the ranking chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankingViolation {
    pub lower: ChainNode,
    pub upper: ChainNode,
    /// Sigma-domain values that failed `lower < upper`.
    pub lower_value: f64,
    pub upper_value: f64,
}

/// Evaluate the exact Q-ranking chain for a labeled trajectory and return
/// every violated adjacent inequality of
/// Q(w_last) < … < Q(w_1) < Q_0 < Q(c_1) < … < Q(c_last).
///
/// Values are compared in the sigma domain, which is equivalent under the
/// monotone sigmoid and avoids infinite sentinels. Refuses when the policy
/// parameters are outside the assumption-satisfying regime.
pub fn validate_theorem_ranking(
    params: &PolicyParams,
    labels: &StepLabels,
) -> Result<Vec<RankingViolation>> {
    if !params.assumption_satisfied() {
        return Err(Error::Refused(format!(
            "theorem preconditions unmet: alpha={} beta={} is not an assumption-satisfying regime",
            params.alpha, params.beta
        )));
    }
    if labels.horizon() != params.horizon {
        return Err(Error::Mismatch(format!(
            "labels cover {} steps but horizon is {}",
            labels.horizon(),
            params.horizon
        )));
    }
    let table = exact_q_table(params);
    let (correct, wrong) = crate::trajectory::split_labels(labels);

    let mut chain: Vec<(ChainNode, f64)> = Vec::with_capacity(labels.horizon() + 1);
    for &w in wrong.iter().rev() {
        chain.push((ChainNode::Wrong(w), table.q_sigma(w, false)));
    }
    chain.push((ChainNode::Root, table.v_root));
    for &c in &correct {
        chain.push((ChainNode::Correct(c), table.q_sigma(c, true)));
    }

    let mut violations = Vec::new();
    for pair in chain.windows(2) {
        let (lower, lower_value) = pair[0];
        let (upper, upper_value) = pair[1];
        if lower_value >= upper_value {
            violations.push(RankingViolation {
                lower,
                upper,
                lower_value,
                upper_value,
            });
        }
    }
    Ok(violations)
}

/// Environment spec file: either explicit transition propensities (fixed or
/// per-question uniform ranges) or a named preset, plus the shared shape
/// parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<[f64; 2]>,
    pub horizon: usize,
    pub feature_noise: f64,
    pub distractor_count: usize,
    pub n_questions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_preset: Option<String>,
}

impl EnvSpec {
    pub fn from_preset(
        preset: PolicyPreset,
        horizon: usize,
        feature_noise: f64,
        distractor_count: usize,
        n_questions: usize,
    ) -> Self {
        Self {
            alpha: None,
            alpha_range: None,
            beta: None,
            beta_range: None,
            horizon,
            feature_noise,
            distractor_count,
            n_questions,
            policy_preset: Some(preset.name().to_string()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: EnvSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("environment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let preset = match &self.policy_preset {
            Some(name) => Some(name.parse::<PolicyPreset>()?),
            None => None,
        };
        let check_range = |name: &str, range: &Option<[f64; 2]>| -> Result<()> {
            if let Some([lo, hi]) = range {
                if !(0.0..=1.0).contains(lo) || !(0.0..=1.0).contains(hi) || lo > hi {
                    return Err(Error::Config(format!(
                        "{name} must be an ordered range inside [0, 1], got [{lo}, {hi}]"
                    )));
                }
            }
            Ok(())
        };
        check_range("alpha_range", &self.alpha_range)?;
        check_range("beta_range", &self.beta_range)?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(p) = v {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
                }
            }
        }
        if self.alpha.is_some() && self.alpha_range.is_some() {
            return Err(Error::Config("give alpha or alpha_range, not both".into()));
        }
        if self.beta.is_some() && self.beta_range.is_some() {
            return Err(Error::Config("give beta or beta_range, not both".into()));
        }
        if preset.is_none() {
            if self.alpha.is_none() && self.alpha_range.is_none() {
                return Err(Error::Config(
                    "environment needs alpha, alpha_range, or policy_preset".into(),
                ));
            }
            if self.beta.is_none() && self.beta_range.is_none() {
                return Err(Error::Config(
                    "environment needs beta, beta_range, or policy_preset".into(),
                ));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.distractor_count == 0 {
            return Err(Error::Config("distractor_count must be >= 1".into()));
        }
        if self.feature_noise.is_nan() || self.feature_noise < 0.0 {
            return Err(Error::Config("feature_noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Resolve the policy parameters for one question. Fixed values pass
    /// through; ranges draw per-question values from a sub-seeded stream, so
    /// results do not depend on generation order.
    pub fn question_params(&self, question_id: &str, master_seed: u64) -> Result<PolicyParams> {
        self.validate()?;
        let preset = self
            .policy_preset
            .as_deref()
            .map(str::parse::<PolicyPreset>)
            .transpose()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_labeled(
            master_seed,
            question_id,
            &[TAG_QUESTION_PARAMS],
        ));
        let preset_ab = preset.map(PolicyPreset::alpha_beta);
        let mut resolve = |fixed: Option<f64>,
                           range: Option<[f64; 2]>,
                           preset_value: Option<f64>,
                           name: &str|
         -> Result<f64> {
            if let Some(v) = fixed {
                Ok(v)
            } else if let Some([lo, hi]) = range {
                Ok(rng.random_range(lo..=hi))
            } else if let Some(v) = preset_value {
                Ok(v)
            } else {
                Err(Error::Config(format!("no source for {name}")))
            }
        };
        let alpha = resolve(
            self.alpha,
            self.alpha_range,
            preset_ab.map(|ab| ab.0),
            "alpha",
        )?;
        let beta = resolve(
            self.beta,
            self.beta_range,
            preset_ab.map(|ab| ab.1),
            "beta",
        )?;
        PolicyParams::new(
            alpha,
            beta,
            self.horizon,
            self.feature_noise,
            self.distractor_count,
        )
    }
}
