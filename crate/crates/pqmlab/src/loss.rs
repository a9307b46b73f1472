//! Training objectives as pure functions of per-step scores.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the raw (logit-domain) step scores, so the trainer can chain
//! straight through a scorer. The listwise families share one
//! margin-augmented chain construction: an ascending sequence of scores is
//! scored by sequential softmax terms whose denominators also carry every
//! wrong score shifted by the margin. The anchor Q_0 is a fixed constant 0,
//! never a gradient target, and all exponentials are handled in
//! log-sum-exp form so scores in [-50, 50] stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logaddexp, sigma};
use crate::trajectory::{split_labels, StepLabels};

/// Traversal direction of the wrong-step sum in the theoretical loss.
///
/// As written, the wrong-step chain rewards later wrong steps for exceeding
/// earlier ones; `Reversed` traverses the wrong list back to front, matching
/// the descending order of the ranking chain. Both readings are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrongOrder {
    #[default]
    AsWritten,
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Bce,
    MseHard,
    MseSoft,
    PlVanilla,
    Theorem,
    Practical,
    Ablate,
    InterPair,
    InterTree,
}

impl LossFamily {
    pub const ALL: [LossFamily; 9] = [
        LossFamily::Bce,
        LossFamily::MseHard,
        LossFamily::MseSoft,
        LossFamily::PlVanilla,
        LossFamily::Theorem,
        LossFamily::Practical,
        LossFamily::Ablate,
        LossFamily::InterPair,
        LossFamily::InterTree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Bce => "bce",
            LossFamily::MseHard => "mse_hard",
            LossFamily::MseSoft => "mse_soft",
            LossFamily::PlVanilla => "pl_vanilla",
            LossFamily::Theorem => "theorem",
            LossFamily::Practical => "practical",
            LossFamily::Ablate => "ablate",
            LossFamily::InterPair => "inter_pair",
            LossFamily::InterTree => "inter_tree",
        }
    }

    /// Families usable as per-trajectory step losses in training.
    pub fn is_step_loss(self) -> bool {
        !matches!(self, LossFamily::InterPair | LossFamily::InterTree)
    }
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = LossFamily::ALL.iter().map(|f| f.name()).collect();
                Error::Config(format!(
                    "unknown loss family {s:?} (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// Loss-family selector with margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    #[serde(default)]
    pub zeta: f64,
    #[serde(default)]
    pub wrong_order: WrongOrder,
}

impl LossSpec {
    pub fn new(family: LossFamily, zeta: f64) -> Result<Self> {
        if zeta.is_nan() || zeta < 0.0 {
            return Err(Error::Config(format!("zeta must be >= 0, got {zeta}")));
        }
        Ok(Self {
            family,
            zeta,
            wrong_order: WrongOrder::default(),
        })
    }

    pub fn with_wrong_order(mut self, wrong_order: WrongOrder) -> Self {
        self.wrong_order = wrong_order;
        self
    }
}

/// Scalar loss value plus gradient with respect to the raw step scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

struct Term {
    value: f64,
    /// Gradient slot, or None for the fixed Q_0 anchor.
    slot: Option<usize>,
}

/// Sum over t = start..n of log( exp(x_t) / (Σ_{q<=t} exp(x_q) + S_W) )
/// along an ascending chain, with S_W = Σ_w exp(w + zeta). The gradient of
/// the sum, scaled by `weight`, is accumulated into `grad`.
fn margin_chain_ll(
    chain: &[Term],
    wrong: &[Term],
    zeta: f64,
    start: usize,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let n = chain.len();
    if start >= n {
        return 0.0;
    }
    let mut acc = f64::NEG_INFINITY;
    for w in wrong {
        acc = logaddexp(acc, w.value + zeta);
    }
    let mut log_d = Vec::with_capacity(n);
    for item in chain {
        acc = logaddexp(acc, item.value);
        log_d.push(acc);
    }

    let mut total = 0.0;
    for t in start..n {
        total += chain[t].value - log_d[t];
    }

    for (j, item) in chain.iter().enumerate() {
        if let Some(slot) = item.slot {
            let mut g = if j >= start { 1.0 } else { 0.0 };
            for &ld in &log_d[j.max(start)..] {
                g -= (item.value - ld).exp();
            }
            grad[slot] += weight * g;
        }
    }
    for item in wrong {
        if let Some(slot) = item.slot {
            let mut g = 0.0;
            for &ld in &log_d[start..] {
                g -= (item.value + zeta - ld).exp();
            }
            grad[slot] += weight * g;
        }
    }
    total
}

fn check_labels(scores: &[f64], labels: &StepLabels) -> Result<()> {
    if scores.len() != labels.horizon() {
        return Err(Error::Mismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.horizon()
        )));
    }
    Ok(())
}

/// Binary cross-entropy over per-step correctness probabilities.
///
/// The gradient is reported in raw-score space, i.e. for p = sigma(s) it is
/// (p - c) / H per step.
pub fn bce_loss(probs: &[f64], labels: &StepLabels) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    for (i, &p) in probs.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "probability at step {} is {p}; BCE needs values strictly inside (0, 1)",
                i + 1
            )));
        }
    }
    let h = labels.horizon() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &c) in probs.iter().zip(&labels.labels) {
        value -= if c { p.ln() } else { (1.0 - p).ln() };
        let target = if c { 1.0 } else { 0.0 };
        grad.push((p - target) / h);
    }
    Ok(LossOutput {
        value: value / h,
        grad,
    })
}

/// Mean squared error between sigma-domain scores and targets in [0, 1].
///
/// Targets are hard 0/1 labels or Monte-Carlo success rates. The gradient is
/// reported in raw-score space via the sigmoid derivative.
pub fn mse_loss(scores_sigma: &[f64], targets: &[f64]) -> Result<LossOutput> {
    if scores_sigma.len() != targets.len() {
        return Err(Error::Mismatch(format!(
            "{} scores for {} targets",
            scores_sigma.len(),
            targets.len()
        )));
    }
    if scores_sigma.is_empty() {
        return Err(Error::Domain("MSE over zero steps is undefined".into()));
    }
    let h = scores_sigma.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(targets.len());
    for (&s, &y) in scores_sigma.iter().zip(targets) {
        let d = s - y;
        value += d * d;
        grad.push(2.0 * d * s * (1.0 - s) / h);
    }
    Ok(LossOutput {
        value: value / h,
        grad,
    })
}

/// The practical comparative loss: ascending correct-step chain anchored at
/// Q_0 = 0, every wrong score margin-shifted in every denominator, internal
/// wrong-step rankings disregarded. Normalized by 1/max(|C|, 1) so the
/// all-wrong case stays defined.
pub fn practical_loss(scores: &[f64], labels: &StepLabels, zeta: f64) -> Result<LossOutput> {
    check_labels(scores, labels)?;
    let (c_idx, w_idx) = split_labels(labels);
    let m = c_idx.len().max(1) as f64;
    let mut grad = vec![0.0; scores.len()];
    let chain = anchored_chain(scores, &c_idx);
    let wrong = slot_terms(scores, &w_idx);
    let ll = margin_chain_ll(&chain, &wrong, zeta, 0, -1.0 / m, &mut grad);
    Ok(LossOutput {
        value: -ll / m,
        grad,
    })
}

/// The theoretical comparative loss: the practical construction plus a
/// Plackett-Luce chain over the wrong steps, jointly normalized by 1/H.
pub fn theorem_loss(
    scores: &[f64],
    labels: &StepLabels,
    zeta: f64,
    wrong_order: WrongOrder,
) -> Result<LossOutput> {
    check_labels(scores, labels)?;
    let (c_idx, w_idx) = split_labels(labels);
    let h = labels.horizon() as f64;
    let mut grad = vec![0.0; scores.len()];

    let ordered_wrong: Vec<usize> = match wrong_order {
        WrongOrder::AsWritten => w_idx.clone(),
        WrongOrder::Reversed => w_idx.iter().rev().cloned().collect(),
    };
    let wrong_chain = slot_terms(scores, &ordered_wrong);
    let ll_wrong = margin_chain_ll(&wrong_chain, &[], 0.0, 1, -1.0 / h, &mut grad);

    let chain = anchored_chain(scores, &c_idx);
    let wrong = slot_terms(scores, &w_idx);
    let ll_correct = margin_chain_ll(&chain, &wrong, zeta, 0, -1.0 / h, &mut grad);

    Ok(LossOutput {
        value: -(ll_wrong + ll_correct) / h,
        grad,
    })
}

/// The margin-free Plackett-Luce baseline: the theoretical loss at zeta = 0.
pub fn pl_vanilla_loss(scores: &[f64], labels: &StepLabels) -> Result<LossOutput> {
    theorem_loss(scores, labels, 0.0, WrongOrder::AsWritten)
}

/// The first-error ablation: as the practical loss, but only the first
/// wrong step appears (margin-shifted) in the denominators; later wrong
/// steps are not referenced and receive exactly zero gradient.
pub fn ablate_loss(scores: &[f64], labels: &StepLabels, zeta: f64) -> Result<LossOutput> {
    check_labels(scores, labels)?;
    let (c_idx, w_idx) = split_labels(labels);
    let m = c_idx.len().max(1) as f64;
    let mut grad = vec![0.0; scores.len()];
    let chain = anchored_chain(scores, &c_idx);
    let wrong = slot_terms(scores, &w_idx[..w_idx.len().min(1)]);
    let ll = margin_chain_ll(&chain, &wrong, zeta, 0, -1.0 / m, &mut grad);
    Ok(LossOutput {
        value: -ll / m,
        grad,
    })
}

fn anchored_chain(scores: &[f64], c_idx: &[usize]) -> Vec<Term> {
    let mut chain = Vec::with_capacity(c_idx.len() + 1);
    chain.push(Term {
        value: 0.0,
        slot: None,
    });
    chain.extend(c_idx.iter().map(|&c| Term {
        value: scores[c - 1],
        slot: Some(c - 1),
    }));
    chain
}

fn slot_terms(scores: &[f64], idx: &[usize]) -> Vec<Term> {
    idx.iter()
        .map(|&i| Term {
            value: scores[i - 1],
            slot: Some(i - 1),
        })
        .collect()
}

/// Inputs to the inter-solution rankings: two solutions diverging from a
/// shared correct prefix, or a full tree of per-depth (correct, wrong)
/// sibling pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum InterSolutionInput {
    /// Divergence at depth t: prefix scores Q_1..Q_{t-1} plus the diverging
    /// pair. Gradient layout: [prefix..., correct, wrong].
    Pair {
        prefix_scores: Vec<f64>,
        correct: f64,
        wrong: f64,
    },
    /// H sibling pairs, each conditioned on the correct prefix. Gradient
    /// layout: [c_1..c_H, w_1..w_H].
    Tree { pairs: Vec<(f64, f64)> },
}

/// Negative log-likelihood of the inter-solution ranking chain under the
/// same margin-augmented listwise construction as the practical loss: the
/// ascending correct chain is scored with every wrong score margin-shifted
/// in every denominator. The chain starts at the first real step, so the
/// tree variant with H = 1 reduces exactly to the pair variant.
pub fn inter_solution_loss(input: &InterSolutionInput, zeta: f64) -> Result<LossOutput> {
    match input {
        InterSolutionInput::Pair {
            prefix_scores,
            correct,
            wrong,
        } => {
            let t = prefix_scores.len() + 1;
            let mut chain: Vec<Term> = prefix_scores
                .iter()
                .enumerate()
                .map(|(i, &v)| Term {
                    value: v,
                    slot: Some(i),
                })
                .collect();
            chain.push(Term {
                value: *correct,
                slot: Some(t - 1),
            });
            let wrong_terms = [Term {
                value: *wrong,
                slot: Some(t),
            }];
            let m = t as f64;
            let mut grad = vec![0.0; t + 1];
            let ll = margin_chain_ll(&chain, &wrong_terms, zeta, 0, -1.0 / m, &mut grad);
            Ok(LossOutput {
                value: -ll / m,
                grad,
            })
        }
        InterSolutionInput::Tree { pairs } => {
            if pairs.is_empty() {
                return Err(Error::Domain("inter-solution tree has no step pairs".into()));
            }
            let h = pairs.len();
            let chain: Vec<Term> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(c, _))| Term {
                    value: c,
                    slot: Some(i),
                })
                .collect();
            let wrong_terms: Vec<Term> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(_, w))| Term {
                    value: w,
                    slot: Some(h + i),
                })
                .collect();
            let m = h as f64;
            let mut grad = vec![0.0; 2 * h];
            let ll = margin_chain_ll(&chain, &wrong_terms, zeta, 0, -1.0 / m, &mut grad);
            Ok(LossOutput {
                value: -ll / m,
                grad,
            })
        }
    }
}

/// Evaluate a step-loss family on raw scores. BCE and MSE families apply
/// the sigmoid internally (BCE in softplus form, so any finite score is
/// safe); `soft_targets` supplies the Monte-Carlo rates for `mse_soft`.
pub fn eval_step_loss(
    spec: &LossSpec,
    raw_scores: &[f64],
    labels: &StepLabels,
    soft_targets: Option<&[f64]>,
) -> Result<LossOutput> {
    match spec.family {
        LossFamily::Bce => {
            check_labels(raw_scores, labels)?;
            let h = labels.horizon() as f64;
            let mut value = 0.0;
            let mut grad = Vec::with_capacity(raw_scores.len());
            for (&s, &c) in raw_scores.iter().zip(&labels.labels) {
                // -ln sigma(s) = softplus(-s); -ln(1 - sigma(s)) = softplus(s)
                let z = if c { -s } else { s };
                value += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                let target = if c { 1.0 } else { 0.0 };
                grad.push((sigma(s) - target) / h);
            }
            Ok(LossOutput {
                value: value / h,
                grad,
            })
        }
        LossFamily::MseHard => {
            check_labels(raw_scores, labels)?;
            let targets: Vec<f64> = labels
                .labels
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect();
            let sigmas: Vec<f64> = raw_scores.iter().map(|&s| sigma(s)).collect();
            mse_loss(&sigmas, &targets)
        }
        LossFamily::MseSoft => {
            check_labels(raw_scores, labels)?;
            let targets = soft_targets.ok_or_else(|| {
                Error::Mismatch("mse_soft requires soft labels, which are not available".into())
            })?;
            let sigmas: Vec<f64> = raw_scores.iter().map(|&s| sigma(s)).collect();
            mse_loss(&sigmas, targets)
        }
        LossFamily::PlVanilla => pl_vanilla_loss(raw_scores, labels),
        LossFamily::Theorem => theorem_loss(raw_scores, labels, spec.zeta, spec.wrong_order),
        LossFamily::Practical => practical_loss(raw_scores, labels, spec.zeta),
        LossFamily::Ablate => ablate_loss(raw_scores, labels, spec.zeta),
        LossFamily::InterPair | LossFamily::InterTree => Err(Error::Domain(format!(
            "{} is an inter-solution family; use inter_solution_loss",
            spec.family.name()
        ))),
    }
}

fn inter_input_from_point(family: LossFamily, h: usize, point: &[f64]) -> Result<InterSolutionInput> {
    match family {
        LossFamily::InterPair => {
            if point.len() != h + 1 {
                return Err(Error::Mismatch(format!(
                    "inter_pair at depth {h} expects {} scores (prefix, correct, wrong), got {}",
                    h + 1,
                    point.len()
                )));
            }
            Ok(InterSolutionInput::Pair {
                prefix_scores: point[..h - 1].to_vec(),
                correct: point[h - 1],
                wrong: point[h],
            })
        }
        LossFamily::InterTree => {
            if point.len() != 2 * h {
                return Err(Error::Mismatch(format!(
                    "inter_tree with {h} pairs expects {} scores, got {}",
                    2 * h,
                    point.len()
                )));
            }
            Ok(InterSolutionInput::Tree {
                pairs: (0..h).map(|i| (point[i], point[h + i])).collect(),
            })
        }
        _ => unreachable!("inter_input_from_point called for a step-loss family"),
    }
}

/// Evaluate any loss family at a flat score point. For the inter-solution
/// families the labels only set the depth: `inter_pair` reads
/// [prefix (H-1), correct, wrong], `inter_tree` reads [c_1..c_H, w_1..w_H].
pub fn eval_at_point(
    spec: &LossSpec,
    point: &[f64],
    labels: &StepLabels,
    soft_targets: Option<&[f64]>,
) -> Result<LossOutput> {
    if spec.family.is_step_loss() {
        eval_step_loss(spec, point, labels, soft_targets)
    } else {
        let input = inter_input_from_point(spec.family, labels.horizon(), point)?;
        inter_solution_loss(&input, spec.zeta)
    }
}

/// Central-finite-difference check of the analytic gradient at `point`.
/// Returns the maximum over coordinates of |Δ| / max(1, |analytic|).
pub fn grad_check(
    spec: &LossSpec,
    labels: &StepLabels,
    point: &[f64],
    soft_targets: Option<&[f64]>,
    h: f64,
) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Domain(format!(
            "finite-difference step {h} outside [1e-7, 1e-4]"
        )));
    }
    let analytic = eval_at_point(spec, point, labels, soft_targets)?.grad;
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let up = eval_at_point(spec, &probe, labels, soft_targets)?.value;
        probe[i] = point[i] - h;
        let down = eval_at_point(spec, &probe, labels, soft_targets)?.value;
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
