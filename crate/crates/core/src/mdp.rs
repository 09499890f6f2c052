//! Ground-truth tabular MDPs, episode simulation and exact dynamic-programming
//! oracles.
//!
//! Indexing is zero-based throughout: step `h` runs over `0..H`, states over
//! `0..S` and actions over `0..A`. Kernels are stored as `[H, S, A, S]`
//! arrays, reward and occupancy tables as `[H, S, A]`, value tables as
//! `[H + 1, S]` with the last row identically zero.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability vectors built from data or read from disk.
pub const PROB_TOL: f64 = 1e-12;
/// Tolerance for mixture weights, which accumulate rounding over many updates.
pub const MIXTURE_TOL: f64 = 1e-9;

/// Occupancy table `d[h, s, a]`.
pub type Occupancy = Array3<f64>;

fn check_distribution(row: ArrayView1<f64>, what: impl FnOnce() -> String) -> Result<()> {
    let mut sum = 0.0;
    for &p in row.iter() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidModel(format!("{}: entry {p} is not a probability", what())));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidModel(format!("{}: sums to {sum}", what())));
    }
    Ok(())
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Draws an index from a (possibly sub-stochastic) categorical vector.
/// Falls back to the last positive entry when rounding leaves `u` uncovered.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Non-stationary finite-horizon MDP without rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    kernel: Array4<f64>,
    init_dist: Array1<f64>,
}

impl TabularMdp {
    /// Builds an MDP from a `[H, S, A, S]` kernel and an initial distribution,
    /// validating every row.
    pub fn new(kernel: Array4<f64>, init_dist: Array1<f64>) -> Result<Self> {
        let (horizon, num_states, num_actions, next) = kernel.dim();
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("S, A and H must all be positive".into()));
        }
        if next != num_states {
            return Err(Error::InvalidModel(format!(
                "kernel maps {num_states} states onto {next} successors"
            )));
        }
        if init_dist.len() != num_states {
            return Err(Error::InvalidModel(format!(
                "initial distribution has {} entries, expected {num_states}",
                init_dist.len()
            )));
        }
        check_distribution(init_dist.view(), || "initial distribution".into())?;
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    check_distribution(kernel.slice(s![h, s, a, ..]), || {
                        format!("kernel row (h={h}, s={s}, a={a})")
                    })?;
                }
            }
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            horizon,
            kernel,
            init_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kernel(&self) -> &Array4<f64> {
        &self.kernel
    }

    pub fn init_dist(&self) -> &Array1<f64> {
        &self.init_dist
    }

    pub fn kernel_row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.kernel.slice(s![h, s, a, ..])
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(self.init_dist.view(), rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, h: usize, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.kernel_row(h, s, a), rng)
    }
}

/// Rewards `r[h, s, a]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    table: Array3<f64>,
}

impl RewardFunction {
    pub fn new(table: Array3<f64>) -> Result<Self> {
        if let Some(bad) = table.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidModel(format!("reward {bad} outside [0, 1]")));
        }
        Ok(RewardFunction { table })
    }

    pub fn constant(horizon: usize, num_states: usize, num_actions: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((horizon, num_states, num_actions), value))
    }

    pub fn table(&self) -> &Array3<f64> {
        &self.table
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.table[[h, s, a]]
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        let expected = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        if self.table.dim() != expected {
            return Err(Error::InvalidArgument(format!(
                "reward table has shape {:?}, expected {expected:?}",
                self.table.dim()
            )));
        }
        Ok(())
    }
}

/// Deterministic Markov policy: one action per `(h, s)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    num_states: usize,
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    /// `actions[h * S + s]` is the action taken in state `s` at step `h`.
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(Error::InvalidArgument(format!(
                "policy has {} entries, expected H*S = {}",
                actions.len(),
                horizon * num_states
            )));
        }
        if let Some(bad) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidArgument(format!("action {bad} out of range 0..{num_actions}")));
        }
        Ok(DeterministicPolicy { num_states, actions })
    }

    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        DeterministicPolicy {
            num_states,
            actions: vec![action; horizon * num_states],
        }
    }

    pub fn from_fn(horizon: usize, num_states: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut actions = Vec::with_capacity(horizon * num_states);
        for h in 0..horizon {
            for s in 0..num_states {
                actions.push(f(h, s));
            }
        }
        DeterministicPolicy { num_states, actions }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.actions.len() / self.num_states.max(1)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Restricts to the first `num_states` states (drops augmented states).
    pub fn restrict_states(&self, num_states: usize) -> Self {
        DeterministicPolicy::from_fn(self.horizon(), num_states, |h, s| self.action(h, s))
    }

    /// Enumerates all `A^(H*S)` deterministic policies. Only sensible for tiny
    /// instances; used as a brute-force oracle.
    pub fn enumerate(horizon: usize, num_states: usize, num_actions: usize) -> impl Iterator<Item = Self> {
        let len = horizon * num_states;
        let total = (num_actions as u128).pow(len as u32);
        (0..total).map(move |mut code| {
            let mut actions = vec![0; len];
            for slot in actions.iter_mut() {
                *slot = (code % num_actions as u128) as usize;
                code /= num_actions as u128;
            }
            DeterministicPolicy { num_states, actions }
        })
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states != mdp.num_states() || self.horizon() != mdp.horizon() {
            return Err(Error::InvalidArgument(format!(
                "policy covers H={} S={}, MDP has H={} S={}",
                self.horizon(),
                self.num_states,
                mdp.horizon(),
                mdp.num_states()
            )));
        }
        if let Some(bad) = self.actions.iter().find(|&&a| a >= mdp.num_actions()) {
            return Err(Error::InvalidArgument(format!("action {bad} out of range")));
        }
        Ok(())
    }
}

/// Finitely supported distribution over deterministic policies. Executed by
/// drawing one atom per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    atoms: Vec<(f64, DeterministicPolicy)>,
}

impl MixturePolicy {
    pub fn dirac(policy: DeterministicPolicy) -> Self {
        MixturePolicy {
            atoms: vec![(1.0, policy)],
        }
    }

    /// Builds a mixture, merging duplicate policies. Weights must be positive
    /// and sum to one within [`MIXTURE_TOL`].
    pub fn new(atoms: Vec<(f64, DeterministicPolicy)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one atom".into()));
        }
        let mut merged: Vec<(f64, DeterministicPolicy)> = Vec::with_capacity(atoms.len());
        let mut index: HashMap<DeterministicPolicy, usize> = HashMap::new();
        let mut total = 0.0;
        for (w, policy) in atoms {
            if !(w > 0.0 && w <= 1.0 + MIXTURE_TOL) {
                return Err(Error::InvalidArgument(format!("mixture weight {w} outside (0, 1]")));
            }
            total += w;
            match index.get(&policy) {
                Some(&i) => merged[i].0 += w,
                None => {
                    index.insert(policy.clone(), merged.len());
                    merged.push((w, policy));
                }
            }
        }
        if (total - 1.0).abs() > MIXTURE_TOL {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Ok(MixturePolicy { atoms: merged })
    }

    pub fn atoms(&self) -> &[(f64, DeterministicPolicy)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight_of(&self, policy: &DeterministicPolicy) -> f64 {
        self.atoms
            .iter()
            .find(|(_, p)| p == policy)
            .map_or(0.0, |(w, _)| *w)
    }

    /// Frank-Wolfe update `(1 - alpha) * self + alpha * dirac(policy)`.
    ///
    /// Atoms whose weight drops below `prune_below` are removed and the
    /// remaining weights renormalized. Returns true if any atom was pruned.
    pub fn mix_in(&mut self, policy: &DeterministicPolicy, alpha: f64, prune_below: f64) -> bool {
        for (w, _) in self.atoms.iter_mut() {
            *w *= 1.0 - alpha;
        }
        match self.atoms.iter_mut().find(|(_, p)| p == policy) {
            Some((w, _)) => *w += alpha,
            None => self.atoms.push((alpha, policy.clone())),
        }
        let before = self.atoms.len();
        self.atoms.retain(|(w, _)| *w >= prune_below);
        let total: f64 = self.atoms.iter().map(|(w, _)| w).sum();
        for (w, _) in self.atoms.iter_mut() {
            *w /= total;
        }
        self.atoms.len() != before
    }

    /// Draws one atom with probability equal to its weight.
    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> &DeterministicPolicy {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, policy) in &self.atoms {
            acc += w;
            if u < acc {
                return policy;
            }
        }
        &self.atoms[self.atoms.len() - 1].1
    }
}

/// One rollout: `(s_h, a_h)` for the first `L` steps, plus the state reached
/// after the last action when `L < H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub pairs: Vec<(usize, usize)>,
    pub final_state: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Successor of step `h`: the next pair's state, or the final state.
    pub fn next_state(&self, h: usize) -> Option<usize> {
        if h + 1 < self.pairs.len() {
            Some(self.pairs[h + 1].0)
        } else if h + 1 == self.pairs.len() {
            self.final_state
        } else {
            None
        }
    }
}

/// `V[h, s]` for `h in 0..=H` (last row zero) and `Q[h, s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub values: Array2<f64>,
    pub q_values: Array3<f64>,
}

impl ValueTables {
    /// `V_1(rho) = sum_s rho(s) V_1(s)`.
    pub fn initial_value(&self, rho: &Array1<f64>) -> f64 {
        self.values.row(0).dot(rho)
    }
}

/// Exact occupancy `d_h^pi(s, a)` by forward recursion.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Occupancy {
    let (horizon, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut occ = Array3::zeros((horizon, ns, na));
    let mut state_mass = mdp.init_dist().clone();
    for h in 0..horizon {
        for s in 0..ns {
            occ[[h, s, policy.action(h, s)]] = state_mass[s];
        }
        if h + 1 < horizon {
            let mut next = Array1::zeros(ns);
            for s in 0..ns {
                let a = policy.action(h, s);
                let m = occ[[h, s, a]];
                if m != 0.0 {
                    next.scaled_add(m, &mdp.kernel_row(h, s, a));
                }
            }
            state_mass = next;
        }
    }
    occ
}

/// Rolls out `len` steps of one episode under the mixture: one atom is drawn
/// at the start and followed for the whole episode.
pub fn sample_episode<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &MixturePolicy,
    len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if len == 0 || len > mdp.horizon() {
        return Err(Error::InvalidArgument(format!(
            "episode length {len} outside 1..={}",
            mdp.horizon()
        )));
    }
    let atom = policy.sample_atom(rng);
    let mut pairs = Vec::with_capacity(len);
    let mut s = mdp.sample_initial(rng);
    let mut final_state = None;
    for h in 0..len {
        let a = atom.action(h, s);
        pairs.push((s, a));
        if h + 1 < len {
            s = mdp.sample_next(h, s, a, rng);
        } else if len < mdp.horizon() {
            final_state = Some(mdp.sample_next(h, s, a, rng));
        }
    }
    Ok(Trajectory { pairs, final_state })
}

/// Backward induction on raw (unchecked) rewards. Shared by the planning
/// oracle and the exploration design, whose rewards exceed 1.
pub(crate) fn backward_induction(mdp: &TabularMdp, rewards: &Array3<f64>) -> (DeterministicPolicy, ValueTables) {
    let (horizon, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut values = Array2::zeros((horizon + 1, ns));
    let mut q_values = Array3::zeros((horizon, ns, na));
    let mut actions = vec![0; horizon * ns];
    for h in (0..horizon).rev() {
        let v_next = values.row(h + 1).to_owned();
        for s in 0..ns {
            for a in 0..na {
                q_values[[h, s, a]] = rewards[[h, s, a]] + mdp.kernel_row(h, s, a).dot(&v_next);
            }
            let (best, v) = argmax_first(q_values.slice(s![h, s, ..]).iter().copied());
            actions[h * ns + s] = best;
            values[[h, s]] = v;
        }
    }
    (
        DeterministicPolicy { num_states: ns, actions },
        ValueTables { values, q_values },
    )
}

/// Optimal deterministic policy and its value tables (lowest-index ties).
pub fn optimal_policy_dp(mdp: &TabularMdp, reward: &RewardFunction) -> Result<(DeterministicPolicy, ValueTables)> {
    reward.check_shape(mdp)?;
    Ok(backward_induction(mdp, reward.table()))
}

/// Exact policy evaluation by backward recursion.
pub fn policy_value(mdp: &TabularMdp, reward: &RewardFunction, policy: &DeterministicPolicy) -> Result<ValueTables> {
    reward.check_shape(mdp)?;
    policy.check_shape(mdp)?;
    let (horizon, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut values = Array2::zeros((horizon + 1, ns));
    let mut q_values = Array3::zeros((horizon, ns, na));
    for h in (0..horizon).rev() {
        let v_next = values.row(h + 1).to_owned();
        for s in 0..ns {
            for a in 0..na {
                q_values[[h, s, a]] = reward.get(h, s, a) + mdp.kernel_row(h, s, a).dot(&v_next);
            }
            values[[h, s]] = q_values[[h, s, policy.action(h, s)]];
        }
    }
    Ok(ValueTables { values, q_values })
}
