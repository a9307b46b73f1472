//! Verification metrics over candidate pools.
//!
//! A pool holds the N sampled solutions of one question. Subsampling for
//! the best-of-n ladder uses nested prefixes of a single seeded permutation
//! per (pool, seed), which makes the pass@n ceiling exactly monotone in n
//! and keeps the ladder internally consistent. All tie-breaks follow the
//! same permutation order.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::sigma;
use crate::scorer::ScorerModel;
use crate::seed;
use crate::trajectory::{ScoredTrajectory, Trajectory};

const TAG_POOL: u64 = 6;

/// Step-score aggregation into a trajectory score. `Min` is the reference
/// mode; `Last` scores only the final step (the outcome-model stand-in) and
/// `Mean` is an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Min,
    Last,
    Mean,
}

pub fn aggregate_trajectory_score(step_scores: &[f64], mode: AggregationMode) -> Result<f64> {
    if step_scores.is_empty() {
        return Err(Error::Domain("aggregation over zero step scores".into()));
    }
    Ok(match mode {
        AggregationMode::Min => step_scores.iter().cloned().fold(f64::INFINITY, f64::min),
        AggregationMode::Last => *step_scores.last().expect("nonempty"),
        AggregationMode::Mean => step_scores.iter().sum::<f64>() / step_scores.len() as f64,
    })
}

/// The N candidate solutions of one question, each with its scores.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub question_id: String,
    pub gold_answer: String,
    pub candidates: Vec<(Trajectory, ScoredTrajectory)>,
}

impl CandidatePool {
    pub fn new(candidates: Vec<(Trajectory, ScoredTrajectory)>) -> Result<Self> {
        let first = candidates.first().ok_or_else(|| {
            Error::Domain("a candidate pool needs at least one candidate".into())
        })?;
        let question_id = first.0.question_id.clone();
        let gold_answer = first.0.gold_answer.clone();
        for (t, s) in &candidates {
            if t.question_id != question_id || t.gold_answer != gold_answer {
                return Err(Error::Invariant {
                    field: "candidates".into(),
                    message: format!(
                        "pool mixes questions: {}/{} vs {}/{}",
                        question_id, gold_answer, t.question_id, t.gold_answer
                    ),
                });
            }
            if s.step_scores.len() != t.horizon() {
                return Err(Error::Mismatch(format!(
                    "candidate of {} has H={} but {} step scores",
                    t.question_id,
                    t.horizon(),
                    s.step_scores.len()
                )));
            }
        }
        Ok(Self {
            question_id,
            gold_answer,
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// The seeded permutation whose nested prefixes define every subsample of a
/// pool of the given size.
pub fn pool_permutation(pool_size: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.shuffle(&mut rng);
    order
}

fn check_n(pool: &CandidatePool, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("n must be >= 1".into()));
    }
    if n > pool.len() {
        return Err(Error::Mismatch(format!(
            "n = {n} exceeds pool size {}",
            pool.len()
        )));
    }
    Ok(())
}

/// Pick the highest-scored candidate among a seeded subsample of n. Ties go
/// to the candidate earliest in the permutation order. Returns the original
/// candidate index and whether the pick is a successful trajectory.
pub fn best_of_n(pool: &CandidatePool, n: usize, seed_value: u64) -> Result<(usize, bool)> {
    check_n(pool, n)?;
    let perm = pool_permutation(pool.len(), seed_value);
    let mut best: Option<(usize, f64)> = None;
    for &idx in &perm[..n] {
        let score = pool.candidates[idx].1.trajectory_score;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((idx, score));
        }
    }
    let (idx, _) = best.expect("n >= 1");
    Ok((idx, pool.candidates[idx].0.success))
}

/// Whether any of the n subsampled candidates succeeds — the verification
/// ceiling. Uses the same nested permutation prefixes as [`best_of_n`].
pub fn pass_at_n(pool: &CandidatePool, n: usize, seed_value: u64) -> Result<bool> {
    check_n(pool, n)?;
    let perm = pool_permutation(pool.len(), seed_value);
    Ok(perm[..n].iter().any(|&idx| pool.candidates[idx].0.success))
}

/// Majority vote over final answers among the n subsampled candidates; ties
/// break by earliest first occurrence in the permutation order.
pub fn self_consistency(pool: &CandidatePool, n: usize, seed_value: u64) -> Result<(String, bool)> {
    check_n(pool, n)?;
    let perm = pool_permutation(pool.len(), seed_value);
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, &idx) in perm[..n].iter().enumerate() {
        let answer = pool.candidates[idx].0.final_answer.as_str();
        let entry = counts.entry(answer).or_insert((0, pos));
        entry.0 += 1;
    }
    let (answer, _) = counts
        .iter()
        .map(|(&answer, &(count, first))| (answer, (count, std::cmp::Reverse(first))))
        .max_by_key(|&(_, key)| key)
        .expect("n >= 1");
    Ok((answer.to_string(), answer == pool.gold_answer))
}

/// How answer groups are weighted when combining voting with the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Each group weighs the sum of sigma(trajectory score) of its members.
    ScoreSum,
    /// Vote count first, group-max trajectory score as the tie-break.
    CountThenScore,
}

/// Self-consistency fused with the scorer: group candidates by final
/// answer, weight the groups, pick the argmax group. Remaining ties break
/// by earliest first occurrence in the permutation order.
pub fn sc_with_prm(
    pool: &CandidatePool,
    n: usize,
    seed_value: u64,
    mode: WeightMode,
) -> Result<(String, bool)> {
    check_n(pool, n)?;
    let perm = pool_permutation(pool.len(), seed_value);
    struct Group {
        count: usize,
        sigma_sum: f64,
        max_score: f64,
        first_pos: usize,
    }
    let mut groups: HashMap<&str, Group> = HashMap::new();
    for (pos, &idx) in perm[..n].iter().enumerate() {
        let (t, s) = &pool.candidates[idx];
        let group = groups.entry(t.final_answer.as_str()).or_insert(Group {
            count: 0,
            sigma_sum: 0.0,
            max_score: f64::NEG_INFINITY,
            first_pos: pos,
        });
        group.count += 1;
        group.sigma_sum += sigma(s.trajectory_score);
        group.max_score = group.max_score.max(s.trajectory_score);
    }
    let mut entries: Vec<(&str, Group)> = groups.into_iter().collect();
    entries.sort_by_key(|(_, g)| g.first_pos);
    let answer = match mode {
        WeightMode::ScoreSum => {
            let mut best: Option<(&str, f64)> = None;
            for (answer, g) in &entries {
                if best.is_none_or(|(_, w)| g.sigma_sum > w) {
                    best = Some((answer, g.sigma_sum));
                }
            }
            best.expect("n >= 1").0
        }
        WeightMode::CountThenScore => {
            let mut best: Option<(&str, (usize, f64))> = None;
            for (answer, g) in &entries {
                let key = (g.count, g.max_score);
                if best.is_none_or(|(_, k)| key > k) {
                    best = Some((answer, key));
                }
            }
            best.expect("n >= 1").0
        }
    };
    Ok((answer.to_string(), answer == pool.gold_answer))
}

/// Accuracy of one method across a pool collection at each ladder n.
#[derive(Debug, Clone, Serialize)]
pub struct BonReport {
    pub ladder: Vec<usize>,
    /// accuracy[i] corresponds to ladder[i].
    pub accuracy: Vec<f64>,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub question_id: String,
    pub n: usize,
    pub selected: usize,
    pub correct: bool,
}

/// Per-pool sub-seed for evaluation randomness.
pub fn pool_seed(master_seed: u64, question_id: &str) -> u64 {
    seed::derive_labeled(master_seed, question_id, &[TAG_POOL])
}

/// Run best-of-n over every pool at every ladder n.
pub fn bon_report(pools: &[CandidatePool], ladder: &[usize], master_seed: u64) -> Result<BonReport> {
    if pools.is_empty() {
        return Err(Error::Domain("no pools to evaluate".into()));
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("ladder must be strictly ascending".into()));
    }
    let mut accuracy = Vec::with_capacity(ladder.len());
    let mut selections = Vec::new();
    for &n in ladder {
        let mut hits = 0usize;
        for pool in pools {
            let (selected, correct) = best_of_n(pool, n, pool_seed(master_seed, &pool.question_id))?;
            hits += usize::from(correct);
            selections.push(Selection {
                question_id: pool.question_id.clone(),
                n,
                selected,
                correct,
            });
        }
        accuracy.push(hits as f64 / pools.len() as f64);
    }
    Ok(BonReport {
        ladder: ladder.to_vec(),
        accuracy,
        selections,
    })
}

/// One row of the per-step score dump.
#[derive(Debug, Clone, Serialize)]
pub struct StepScoreRow {
    pub step: usize,
    pub raw_q: f64,
    pub sigma_q: f64,
}

/// Tables-style per-step listing of a scorer's raw and sigma-domain scores.
pub fn dump_step_scores(model: &ScorerModel, traj: &Trajectory) -> Result<Vec<StepScoreRow>> {
    let scores = model.score_steps(traj)?;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &raw_q)| StepScoreRow {
            step: i + 1,
            raw_q,
            sigma_q: sigma(raw_q),
        })
        .collect())
}
