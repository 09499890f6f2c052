#![allow(dead_code)]

use ndarray::Array3;
use rand::Rng;
use reward_agnostic::harness::{generate_random_mdp, GeneratorSpec};
use reward_agnostic::{DeterministicPolicy, RewardFunction, SeedStream, TabularMdp};

pub fn random_instance(seed: u64, states: usize, actions: usize, horizon: usize, rewards: usize) -> (TabularMdp, Vec<RewardFunction>) {
    let spec = GeneratorSpec {
        states,
        actions,
        horizon,
        concentration: 1.0,
        seed: None,
    };
    generate_random_mdp(&spec, rewards, SeedStream::new(seed)).unwrap()
}

pub fn random_policy<R: Rng>(horizon: usize, states: usize, actions: usize, rng: &mut R) -> DeterministicPolicy {
    DeterministicPolicy::from_fn(horizon, states, |_, _| rng.random_range(0..actions))
}

/// `V_1(rho)` by summing over every state path, independent of the DP code.
pub fn path_sum_value(mdp: &TabularMdp, reward: &RewardFunction, policy: &DeterministicPolicy) -> f64 {
    fn walk(mdp: &TabularMdp, reward: &RewardFunction, policy: &DeterministicPolicy, h: usize, s: usize, prob: f64) -> f64 {
        let a = policy.action(h, s);
        let mut total = prob * reward.get(h, s, a);
        if h + 1 < mdp.horizon() {
            for next in 0..mdp.num_states() {
                let p = mdp.kernel()[[h, s, a, next]];
                if p > 0.0 {
                    total += walk(mdp, reward, policy, h + 1, next, prob * p);
                }
            }
        }
        total
    }
    (0..mdp.num_states())
        .map(|s| walk(mdp, reward, policy, 0, s, mdp.init_dist()[s]))
        .sum()
}

/// Occupancy by summing path probabilities, independent of the recursion code.
pub fn path_sum_occupancy(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Array3<f64> {
    let mut occ = Array3::zeros((mdp.horizon(), mdp.num_states(), mdp.num_actions()));
    fn walk(mdp: &TabularMdp, policy: &DeterministicPolicy, occ: &mut Array3<f64>, h: usize, s: usize, prob: f64) {
        let a = policy.action(h, s);
        occ[[h, s, a]] += prob;
        if h + 1 < mdp.horizon() {
            for next in 0..mdp.num_states() {
                let p = mdp.kernel()[[h, s, a, next]];
                if p > 0.0 {
                    walk(mdp, policy, occ, h + 1, next, prob * p);
                }
            }
        }
    }
    for s in 0..mdp.num_states() {
        walk(mdp, policy, &mut occ, 0, s, mdp.init_dist()[s]);
    }
    occ
}

pub fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
