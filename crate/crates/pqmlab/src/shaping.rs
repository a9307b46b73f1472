//! Tabular deterministic MDPs and potential-based reward shaping checks.
//!
//! Adding Φ(s') − Φ(s) to a reward function leaves every optimal action set
//! unchanged, and under deterministic transitions the optimal advantage
//! function is itself such a shaping of the reward. Both facts are exercised
//! here on small finite-horizon MDPs solved exactly by value iteration. The
//! horizon acts as the episode boundary, so the potential of the terminal
//! timestep is zero; the optimal-advantage potential Φ = V* satisfies that
//! automatically.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

/// A small deterministic MDP: `next[s][a]` is the successor state and
/// `reward[s][a]` the one-step reward.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub next: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
    pub horizon: usize,
}

/// Size cap for randomly generated instances.
pub const MAX_STATES: usize = 50;
pub const MAX_ACTIONS: usize = 5;
pub const MAX_HORIZON: usize = 6;

const TAG_MDP: u64 = 1;
const TAG_POTENTIAL: u64 = 2;

/// Tolerance for membership in an optimal action set.
const ARGMAX_EPS: f64 = 1e-9;

impl TabularMdp {
    pub fn new(
        next: Vec<Vec<usize>>,
        reward: Vec<Vec<f64>>,
        horizon: usize,
    ) -> Result<Self> {
        let n_states = next.len();
        if n_states == 0 || horizon == 0 {
            return Err(Error::Config("MDP needs >= 1 state and horizon >= 1".into()));
        }
        let n_actions = next[0].len();
        if n_actions == 0 {
            return Err(Error::Config("MDP needs >= 1 action".into()));
        }
        if reward.len() != n_states
            || next.iter().any(|row| row.len() != n_actions)
            || reward.iter().any(|row| row.len() != n_actions)
        {
            return Err(Error::Mismatch(
                "transition and reward tables must be n_states x n_actions".into(),
            ));
        }
        if next.iter().flatten().any(|&s| s >= n_states) {
            return Err(Error::Config("transition target out of range".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            next,
            reward,
            horizon,
        })
    }

    /// Random instance with uniform rewards and uniformly chosen successors.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if n_states > MAX_STATES || n_actions > MAX_ACTIONS || horizon > MAX_HORIZON {
            return Err(Error::Refused(format!(
                "instance {n_states}x{n_actions} H={horizon} exceeds the small-MDP caps \
                 ({MAX_STATES} states, {MAX_ACTIONS} actions, H <= {MAX_HORIZON})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, &[TAG_MDP]));
        let next = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random_range(0..n_states)).collect())
            .collect();
        let reward = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
            .collect();
        TabularMdp::new(next, reward, horizon)
    }
}

/// Random potential table over states, values in (-1, 1).
pub fn random_potential(n_states: usize, master_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, &[TAG_POTENTIAL]));
    (0..n_states).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Exact finite-horizon value iteration under an arbitrary time-dependent
/// reward. Returns the optimal action set at every (t, s), where membership
/// tolerates [`ARGMAX_EPS`] slack below the maximum.
pub fn optimal_action_sets_with_reward(
    mdp: &TabularMdp,
    reward: impl Fn(usize, usize, usize) -> f64,
) -> Vec<Vec<Vec<usize>>> {
    let mut value = vec![0.0; mdp.n_states];
    let mut sets = vec![vec![Vec::new(); mdp.n_states]; mdp.horizon];
    for t in (0..mdp.horizon).rev() {
        let mut next_value = vec![f64::NEG_INFINITY; mdp.n_states];
        for s in 0..mdp.n_states {
            let q: Vec<f64> = (0..mdp.n_actions)
                .map(|a| reward(t, s, a) + value[mdp.next[s][a]])
                .collect();
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            sets[t][s] = (0..mdp.n_actions)
                .filter(|&a| q[a] >= best - ARGMAX_EPS)
                .collect();
            next_value[s] = best;
        }
        value = next_value;
    }
    sets
}

/// Optimal action sets under the MDP's own reward.
pub fn optimal_action_sets(mdp: &TabularMdp) -> Vec<Vec<Vec<usize>>> {
    optimal_action_sets_with_reward(mdp, |_, s, a| mdp.reward[s][a])
}

/// Optimal action sets under the potential-shaped reward
/// r'(s,a) = r(s,a) + Φ(s') − Φ(s), with Φ of the terminal timestep zero.
pub fn optimal_action_sets_shaped(mdp: &TabularMdp, potential: &[f64]) -> Vec<Vec<Vec<usize>>> {
    let horizon = mdp.horizon;
    optimal_action_sets_with_reward(mdp, |t, s, a| {
        let phi_next = if t + 1 < horizon {
            potential[mdp.next[s][a]]
        } else {
            0.0
        };
        mdp.reward[s][a] + phi_next - potential[s]
    })
}

/// True iff shaping by `potential` leaves every per-(t, s) optimal action
/// set identical — argmax invariance, not value invariance.
pub fn shaping_equivalence_check(mdp: &TabularMdp, potential: &[f64]) -> Result<bool> {
    if potential.len() != mdp.n_states {
        return Err(Error::Mismatch(format!(
            "potential covers {} states but the MDP has {}",
            potential.len(),
            mdp.n_states
        )));
    }
    Ok(optimal_action_sets(mdp) == optimal_action_sets_shaped(mdp, potential))
}

/// Generate a random instance and potential from one seed and run the check.
pub fn shaping_equivalence_trial(
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    master_seed: u64,
) -> Result<bool> {
    let mdp = TabularMdp::random(n_states, n_actions, horizon, master_seed)?;
    let potential = random_potential(n_states, master_seed);
    shaping_equivalence_check(&mdp, &potential)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_potential_is_trivially_equivalent() {
        let mdp = TabularMdp::random(10, 3, 4, 99).unwrap();
        let potential = vec![0.7; mdp.n_states];
        assert!(shaping_equivalence_check(&mdp, &potential).unwrap());
    }

    #[test]
    fn random_potentials_preserve_argmax() {
        for s in 0..20u64 {
            assert!(shaping_equivalence_trial(12, 4, 5, 1000 + s).unwrap(), "seed {s}");
        }
    }

    #[test]
    fn optimal_advantage_is_a_valid_shaping() {
        // Lemma: under deterministic transitions, A*(s,a) = r + V*(s') - V*(s)
        // is the shaping with potential V* at t=0; it must preserve argmax.
        let mdp = TabularMdp::random(8, 3, 4, 4242).unwrap();
        // V* one step below the root = value function at t=1.
        let mut value = vec![0.0; mdp.n_states];
        for _ in 0..mdp.horizon - 1 {
            value = (0..mdp.n_states)
                .map(|s| {
                    (0..mdp.n_actions)
                        .map(|a| mdp.reward[s][a] + value[mdp.next[s][a]])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        assert!(shaping_equivalence_check(&mdp, &value).unwrap());
    }

    #[test]
    fn non_potential_perturbation_found_by_search_breaks_equivalence() {
        // Two states, two actions, one step: a tie-free instance where a
        // per-(s,a) bonus flips the argmax. The search scans bonus sizes.
        let mdp = TabularMdp::new(
            vec![vec![0, 1], vec![0, 1]],
            vec![vec![0.6, 0.4], vec![0.2, 0.8]],
            1,
        )
        .unwrap();
        let potential = vec![0.3, -0.5];
        assert!(shaping_equivalence_check(&mdp, &potential).unwrap());

        let base = optimal_action_sets(&mdp);
        let horizon = mdp.horizon;
        let found = (1..=10).map(|k| k as f64 * 0.1).any(|delta| {
            let perturbed = optimal_action_sets_with_reward(&mdp, |t, s, a| {
                let phi_next = if t + 1 < horizon { potential[mdp.next[s][a]] } else { 0.0 };
                let bump = if (s, a) == (0, 1) { delta } else { 0.0 };
                mdp.reward[s][a] + phi_next - potential[s] + bump
            });
            perturbed != base
        });
        assert!(found, "no perturbation in the search range flipped the argmax");
    }

    #[test]
    fn oversized_instances_are_refused() {
        assert!(TabularMdp::random(51, 3, 4, 1).is_err());
        assert!(TabularMdp::random(10, 6, 4, 1).is_err());
        assert!(TabularMdp::random(10, 3, 7, 1).is_err());
    }
}
