//! Monte-Carlo harness checks that tie the oracle, sampler, losses, and
//! evaluation metrics together on simulated data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pqmlab::corpus::CorpusRecord;
use pqmlab::eval::{best_of_n, pool_seed, AggregationMode, CandidatePool};
use pqmlab::loss::{inter_solution_loss, InterSolutionInput};
use pqmlab::mdp::{
    exact_q_table, sample_candidate, sample_trajectory, validate_assumption, PolicyParams,
};
use pqmlab::trajectory::{ScoredTrajectory, StepLabels};

fn interior_params(rng: &mut ChaCha8Rng, horizon: usize) -> PolicyParams {
    let alpha = rng.random_range(0.7..0.95);
    let beta = rng.random_range(0.05..0.3);
    PolicyParams::new(alpha, beta, horizon, 0.5, 3).unwrap()
}

fn simulated_pools(
    params: &PolicyParams,
    n_pools: usize,
    pool_size: usize,
    seed: u64,
) -> Vec<Vec<CorpusRecord>> {
    (0..n_pools)
        .map(|i| {
            let qid = format!("h{i:04}");
            (0..pool_size)
                .map(|c| {
                    let (t, l) = sample_candidate(params, &qid, c as u64, seed);
                    CorpusRecord::new(t, l).unwrap()
                })
                .collect()
        })
        .collect()
}

fn scored(records: &[CorpusRecord], scores: impl Fn(&CorpusRecord, usize) -> Vec<f64>) -> CandidatePool {
    CandidatePool::new(
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = ScoredTrajectory::new(
                    r.trajectory.question_id.clone(),
                    scores(r, i),
                    AggregationMode::Min,
                )
                .unwrap();
                (r.trajectory.clone(), s)
            })
            .collect(),
    )
    .unwrap()
}

fn accuracy(pools: &[CandidatePool], eval_seed: u64, n: usize) -> f64 {
    let hits: usize = pools
        .iter()
        .map(|p| usize::from(best_of_n(p, n, pool_seed(eval_seed, &p.question_id)).unwrap().1))
        .sum();
    hits as f64 / pools.len() as f64
}

#[test]
fn oracle_scorer_dominates_random_scorer_at_every_n() {
    let params = PolicyParams::new(0.8, 0.1, 6, 0.5, 3).unwrap();
    let raw = simulated_pools(&params, 200, 32, 0xd0);
    let table = exact_q_table(&params);
    let eval_seed = 0xd1;

    let oracle_pools: Vec<CandidatePool> = raw
        .iter()
        .map(|records| {
            scored(records, |r, _| {
                let labels: Vec<bool> = r
                    .trajectory
                    .steps
                    .iter()
                    .map(|s| s.latent_correct.unwrap())
                    .collect();
                table.raw_scores(&StepLabels::new(labels).unwrap())
            })
        })
        .collect();
    let random_pools: Vec<CandidatePool> = raw
        .iter()
        .map(|records| {
            scored(records, |r, i| {
                let mut rng = ChaCha8Rng::seed_from_u64(pqmlab::seed::derive_labeled(
                    eval_seed,
                    &r.trajectory.question_id,
                    &[1, i as u64],
                ));
                (0..r.trajectory.horizon()).map(|_| rng.random()).collect()
            })
        })
        .collect();

    let bon1 = accuracy(&random_pools, eval_seed, 1);
    for n in [2, 4, 8, 16, 32] {
        let oracle = accuracy(&oracle_pools, eval_seed, n);
        let random = accuracy(&random_pools, eval_seed, n);
        assert!(
            oracle >= random,
            "oracle {oracle} below random {random} at n={n}"
        );
        // A random scorer has no selection power: its BON@n stays within
        // sampling noise of the raw policy accuracy.
        let se = (bon1 * (1.0 - bon1) / 200.0).sqrt();
        assert!(
            (random - bon1).abs() <= 4.0 * se + 0.02,
            "random BON@{n} = {random} drifted from BON@1 = {bon1}"
        );
    }
    // With the exact oracle, more candidates never hurt on this ladder.
    let ladder: Vec<f64> = [1, 2, 4, 8, 16, 32]
        .iter()
        .map(|&n| accuracy(&oracle_pools, eval_seed, n))
        .collect();
    for pair in ladder.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-12, "oracle ladder dipped: {ladder:?}");
    }
}

#[test]
fn oracle_scores_drop_sharply_at_wrong_steps() {
    // The argmin of the exact sigma scores is a latently wrong step, and the
    // first wrong step already scores below the root value and below every
    // correct step.
    let mut rng = ChaCha8Rng::seed_from_u64(0xd2);
    let mut checked = 0usize;
    for trial in 0..500 {
        let horizon = rng.random_range(2..=8);
        let params = interior_params(&mut rng, horizon);
        let table = exact_q_table(&params);
        let (_, labels) = sample_trajectory(&params, &format!("s{trial}"), rng.random());
        let sigma = table.sigma_scores(&labels);
        let Some(first_wrong) = labels.first_error else {
            continue;
        };
        let argmin = sigma
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(!labels.labels[argmin], "argmin step is latently correct");
        let first_wrong_sigma = sigma[first_wrong - 1];
        assert!(first_wrong_sigma < table.v_root);
        for (i, &correct) in labels.labels.iter().enumerate() {
            if correct {
                assert!(first_wrong_sigma < sigma[i]);
            }
        }
        checked += 1;
    }
    assert!(checked > 100, "too few trajectories had wrong steps");
}

#[test]
fn inter_solution_oracle_beats_swapped_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd3);
    for _ in 0..100 {
        let horizon = rng.random_range(2..=9);
        let params = interior_params(&mut rng, horizon);
        let table = exact_q_table(&params);
        // Terminal-step values are exactly 0 and 1, whose logits are the
        // infinite sentinels; the finite regime is the interior steps.
        let pairs: Vec<(f64, f64)> = (1..horizon)
            .map(|t| (table.q_raw(t, true), table.q_raw(t, false)))
            .collect();
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(c, w)| (w, c)).collect();
        let zeta = rng.random_range(0.0..4.0);
        let well_ordered =
            inter_solution_loss(&InterSolutionInput::Tree { pairs }, zeta).unwrap();
        let misordered =
            inter_solution_loss(&InterSolutionInput::Tree { pairs: swapped }, zeta).unwrap();
        assert!(
            well_ordered.value < misordered.value,
            "oracle assignment no better than swapped: {} vs {}",
            well_ordered.value,
            misordered.value
        );
    }
}

#[test]
fn symmetric_policies_are_statistically_indistinguishable() {
    let params = PolicyParams::new(0.6, 0.6, 6, 0.5, 3).unwrap();
    let report = validate_assumption(&params, 512, 32, 0xd4).unwrap();
    let a = report.success_given_correct;
    let b = report.success_given_wrong;
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!(
        (a.estimate - b.estimate).abs() <= 3.0 * se,
        "conditional success rates split under alpha == beta: {} vs {}",
        a.estimate,
        b.estimate
    );
}

#[test]
fn sampled_transition_frequencies_match_parameters() {
    // Chi-squared sanity on (alpha, beta) transition counts pooled over a
    // large sample of trajectories.
    let params = PolicyParams::new(0.75, 0.2, 8, 0.5, 3).unwrap();
    let mut counts = [[0usize; 2]; 2]; // [from-correct?][to-correct?]
    for i in 0..4000 {
        let (_, labels) = sample_trajectory(&params, &format!("x{i}"), 0xd5);
        let mut state = true;
        for &next in &labels.labels {
            counts[usize::from(!state)][usize::from(!next)] += 1;
            state = next;
        }
    }
    let mut chi2 = 0.0;
    for (from, p_correct) in [(0usize, params.alpha), (1, params.beta)] {
        let total = (counts[from][0] + counts[from][1]) as f64;
        for (to, p) in [(0usize, p_correct), (1, 1.0 - p_correct)] {
            let expected = total * p;
            let observed = counts[from][to] as f64;
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    // 2 degrees of freedom; 13.8 is the 0.1% tail.
    assert!(chi2 < 13.8, "chi2 = {chi2}, counts {counts:?}");
}
