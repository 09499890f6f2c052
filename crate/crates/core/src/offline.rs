//! Pessimistic model-based offline planning on the behavior dataset:
//! data-independent visit lower bounds, subsampling, the empirical kernel,
//! Bernstein-style penalties and lower-confidence value iteration.

use ndarray::{s, Array2, Array3, Array4, ArrayView1};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{mixture_occupancy, OccupancyModel};
use crate::mdp::{argmax_first, DeterministicPolicy, MixturePolicy, Occupancy, RewardFunction, Trajectory};

/// `log(HSA / delta)`.
pub fn confidence_log(horizon: usize, num_states: usize, num_actions: usize, delta: f64) -> f64 {
    ((horizon * num_states * num_actions) as f64 / delta).ln()
}

/// One `(s, a, s')` record; `next` is `None` at the final step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next: Option<usize>,
}

/// Per-step transition records from the behavior episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    num_states: usize,
    num_actions: usize,
    records: Vec<Vec<Transition>>,
}

impl TransitionDataset {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        TransitionDataset {
            num_states,
            num_actions,
            records: vec![Vec::new(); horizon],
        }
    }

    /// Splits full-length episodes into per-step records.
    pub fn from_trajectories(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        episodes: &[Trajectory],
    ) -> Result<Self> {
        let mut data = Self::new(horizon, num_states, num_actions);
        for ep in episodes {
            if ep.len() != horizon {
                return Err(Error::InvalidArgument(format!(
                    "behavior episode has {} steps, expected {horizon}",
                    ep.len()
                )));
            }
            for (h, &(s, a)) in ep.pairs.iter().enumerate() {
                data.push(
                    h,
                    Transition {
                        state: s,
                        action: a,
                        next: ep.next_state(h),
                    },
                )?;
            }
        }
        Ok(data)
    }

    pub fn push(&mut self, h: usize, record: Transition) -> Result<()> {
        let horizon = self.records.len();
        if h >= horizon {
            return Err(Error::InvalidArgument(format!("step {h} outside 0..{horizon}")));
        }
        if record.state >= self.num_states || record.action >= self.num_actions {
            return Err(Error::InvalidArgument(format!("record {record:?} out of range")));
        }
        match record.next {
            Some(n) if n >= self.num_states => {
                return Err(Error::InvalidArgument(format!("successor {n} out of range")))
            }
            Some(_) if h + 1 == horizon => {
                return Err(Error::InvalidArgument("final-step records have no successor".into()))
            }
            None if h + 1 < horizon => {
                return Err(Error::InvalidArgument(format!("record at step {h} lacks a successor")))
            }
            _ => {}
        }
        self.records[h].push(record);
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn records(&self, h: usize) -> &[Transition] {
        &self.records[h]
    }

    pub fn len(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N_h(s, a)`.
    pub fn counts(&self) -> Array3<u64> {
        let mut counts = Array3::zeros((self.horizon(), self.num_states, self.num_actions));
        for (h, recs) in self.records.iter().enumerate() {
            for r in recs {
                counts[[h, r.state, r.action]] += 1;
            }
        }
        counts
    }
}

/// Real-valued lower bounds on per-cell visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitLowerBound {
    pub table: Array3<f64>,
}

/// `[K/4 * E_mu[d_h(s, a)] - K xi / (8N) - 3 log(HSA / delta)]_+` from a
/// precomputed mixture occupancy.
pub fn visit_lower_bounds_from_occupancy(mixed: &Occupancy, k: usize, n: usize, xi: f64, delta: f64) -> VisitLowerBound {
    let (horizon, ns, na) = mixed.dim();
    let k = k as f64;
    let offset = k * xi / (8.0 * n as f64) + 3.0 * confidence_log(horizon, ns, na, delta);
    VisitLowerBound {
        table: mixed.mapv(|d| (k / 4.0 * d - offset).max(0.0)),
    }
}

pub fn visit_lower_bounds(
    model: &OccupancyModel,
    mixture: &MixturePolicy,
    k: usize,
    n: usize,
    xi: f64,
    delta: f64,
) -> Result<VisitLowerBound> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("K and N must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} outside (0, 1)")));
    }
    Ok(visit_lower_bounds_from_occupancy(&mixture_occupancy(model, mixture), k, n, xi, delta))
}

/// Keeps `min(floor(bound), N_h(s, a))` records per cell, drawn uniformly
/// without replacement. Kept records stay in their original order.
pub fn subsample<R: Rng + ?Sized>(dataset: &TransitionDataset, bounds: &VisitLowerBound, rng: &mut R) -> Result<TransitionDataset> {
    let expected = (dataset.horizon(), dataset.num_states, dataset.num_actions);
    if bounds.table.dim() != expected {
        return Err(Error::InvalidArgument("bound table shape disagrees with the dataset".into()));
    }
    let mut out = TransitionDataset::new(dataset.horizon(), dataset.num_states, dataset.num_actions);
    for (h, recs) in dataset.records.iter().enumerate() {
        let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_states * dataset.num_actions];
        for (i, r) in recs.iter().enumerate() {
            by_cell[r.state * dataset.num_actions + r.action].push(i);
        }
        let mut keep = Vec::new();
        for (cell, members) in by_cell.iter().enumerate() {
            let (s, a) = (cell / dataset.num_actions, cell % dataset.num_actions);
            let quota = (bounds.table[[h, s, a]].floor() as usize).min(members.len());
            if quota == members.len() {
                keep.extend_from_slice(members);
            } else if quota > 0 {
                keep.extend(index::sample(rng, members.len(), quota).into_iter().map(|j| members[j]));
            }
        }
        keep.sort_unstable();
        out.records[h] = keep.into_iter().map(|i| recs[i]).collect();
    }
    Ok(out)
}

/// Empirical kernel `[H, S, A, S]` with the per-cell counts `m_h(s, a)` used
/// by the penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    pub kernel: Array4<f64>,
    pub counts: Array3<f64>,
}

impl EmpiricalModel {
    pub fn horizon(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn num_states(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn num_actions(&self) -> usize {
        self.kernel.dim().2
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.kernel.slice(s![h, s, a, ..])
    }

    /// Replaces the penalty counts, e.g. with the real-valued `min(bound, N_h)`.
    pub fn with_counts(mut self, counts: Array3<f64>) -> Result<Self> {
        if counts.dim() != self.counts.dim() {
            return Err(Error::InvalidArgument("count table shape mismatch".into()));
        }
        self.counts = counts;
        Ok(self)
    }
}

/// Frequencies over the (trimmed) records; rows with no records are zero.
/// Final-step rows are always zero since those records have no successor.
pub fn empirical_kernel(dataset: &TransitionDataset) -> EmpiricalModel {
    let (horizon, ns, na) = (dataset.horizon(), dataset.num_states, dataset.num_actions);
    let mut kernel = Array4::zeros((horizon, ns, na, ns));
    let counts = dataset.counts();
    for (h, recs) in dataset.records.iter().enumerate() {
        for r in recs {
            if let Some(next) = r.next {
                kernel[[h, r.state, r.action, next]] += 1.0;
            }
        }
    }
    for h in 0..horizon {
        for s in 0..ns {
            for a in 0..na {
                let n = counts[[h, s, a]];
                if n > 0 {
                    let mut row = kernel.slice_mut(s![h, s, a, ..]);
                    row /= n as f64;
                }
            }
        }
    }
    EmpiricalModel {
        kernel,
        counts: counts.mapv(|c| c as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    RewardAgnostic,
    /// Extra factor `S` on the log term.
    RewardFree,
    /// No penalty: plain value iteration on the empirical model.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyMode {
    pub kind: PenaltyKind,
    pub c_b: f64,
}

impl PenaltyMode {
    pub fn new(kind: PenaltyKind, c_b: f64) -> Result<Self> {
        if !(c_b > 0.0) {
            return Err(Error::InvalidArgument(format!("c_b = {c_b} must be positive")));
        }
        Ok(PenaltyMode { kind, c_b })
    }

    pub fn disabled() -> Self {
        PenaltyMode {
            kind: PenaltyKind::Disabled,
            c_b: 1.0,
        }
    }
}

/// Variance of `values` under a (possibly zero) row.
fn row_variance(row: ArrayView1<f64>, values: ArrayView1<f64>) -> f64 {
    let mass = row.sum();
    if mass <= 0.0 {
        return 0.0;
    }
    let mean = row.dot(&values) / mass;
    let var = row
        .iter()
        .zip(values.iter())
        .map(|(p, v)| p * (v - mean).powi(2))
        .sum::<f64>()
        / mass;
    var.max(0.0)
}

/// Bernstein-style width
/// `min(sqrt(c_b L / m * Var_row(v)) + c_b H L / m, H)`, with `L = log(HSA/delta)`
/// (times `S` in reward-free mode). Saturates at `H` when `m = 0`.
pub fn bernstein_penalty(
    mode: &PenaltyMode,
    count: f64,
    row: ArrayView1<f64>,
    v_next: ArrayView1<f64>,
    log_term: f64,
    horizon: usize,
    num_states: usize,
) -> f64 {
    let h = horizon as f64;
    let log_term = match mode.kind {
        PenaltyKind::Disabled => return 0.0,
        PenaltyKind::RewardAgnostic => log_term,
        PenaltyKind::RewardFree => num_states as f64 * log_term,
    };
    if count <= 0.0 {
        return h;
    }
    let var = row_variance(row, v_next);
    let width = (mode.c_b * log_term / count * var).sqrt() + mode.c_b * h * log_term / count;
    width.min(h)
}

/// Lower-confidence value tables and the greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// `[H + 1, S]`, last row zero.
    pub values: Array2<f64>,
    pub q_values: Array3<f64>,
    pub policy: DeterministicPolicy,
    /// Effective counts `m_h(s, a)` the penalties were computed from.
    pub counts: Array3<f64>,
    pub penalties: Array3<f64>,
}

/// Backward sweep `Q_h = max(r_h + P_h V_{h+1} - b_h, 0)`, `V_h = max_a Q_h`.
pub fn pessimistic_vi(model: &EmpiricalModel, reward: &RewardFunction, mode: &PenaltyMode, delta: f64) -> Result<PlanResult> {
    let (horizon, ns, na) = (model.horizon(), model.num_states(), model.num_actions());
    if reward.table().dim() != (horizon, ns, na) {
        return Err(Error::InvalidArgument("reward shape disagrees with the model".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} outside (0, 1)")));
    }
    let log_term = confidence_log(horizon, ns, na, delta);
    let mut values = Array2::zeros((horizon + 1, ns));
    let mut q_values = Array3::zeros((horizon, ns, na));
    let mut penalties = Array3::zeros((horizon, ns, na));
    let mut actions = vec![0; horizon * ns];
    for h in (0..horizon).rev() {
        let v_next = values.row(h + 1).to_owned();
        for s in 0..ns {
            for a in 0..na {
                let row = model.row(h, s, a);
                let b = bernstein_penalty(mode, model.counts[[h, s, a]], row, v_next.view(), log_term, horizon, ns);
                penalties[[h, s, a]] = b;
                q_values[[h, s, a]] = (reward.get(h, s, a) + row.dot(&v_next) - b).max(0.0);
            }
            let (best, v) = argmax_first(q_values.slice(s![h, s, ..]).iter().copied());
            actions[h * ns + s] = best;
            values[[h, s]] = v;
        }
    }
    debug_assert!(q_values
        .outer_iter()
        .enumerate()
        .all(|(h, q)| q.iter().all(|&x| x <= (horizon - h) as f64 + 1e-9)));
    Ok(PlanResult {
        values,
        q_values,
        policy: DeterministicPolicy::new(horizon, ns, na, actions)?,
        counts: model.counts.clone(),
        penalties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_with_cell(n: usize) -> TransitionDataset {
        let mut d = TransitionDataset::new(2, 2, 2);
        for i in 0..n {
            d.push(0, Transition { state: 0, action: 1, next: Some(i % 2) }).unwrap();
        }
        d.push(1, Transition { state: 1, action: 0, next: None }).unwrap();
        d
    }

    #[test]
    fn push_validates_successors() {
        let mut d = TransitionDataset::new(2, 2, 2);
        assert!(d.push(0, Transition { state: 0, action: 0, next: None }).is_err());
        assert!(d.push(1, Transition { state: 0, action: 0, next: Some(1) }).is_err());
        assert!(d.push(0, Transition { state: 0, action: 2, next: Some(1) }).is_err());
        assert!(d.push(2, Transition { state: 0, action: 0, next: None }).is_err());
    }

    #[test]
    fn lower_bounds_clip_and_substitute() {
        let zero = Array3::zeros((2, 2, 2));
        let b = visit_lower_bounds_from_occupancy(&zero, 100, 10, 1.0, 0.1);
        assert!(b.table.iter().all(|&x| x == 0.0));

        let mixed = Array3::from_elem((4, 5, 3), 0.1);
        let b = visit_lower_bounds_from_occupancy(&mixed, 8000, 4000, 100.0, 0.1);
        let expected = 200.0 - 25.0 - 3.0 * 600f64.ln();
        assert!((b.table[[0, 0, 0]] - expected).abs() < 1e-9);
        assert!((b.table[[0, 0, 0]] - 155.81).abs() < 0.01);

        let doubled = visit_lower_bounds_from_occupancy(&mixed, 16000, 4000, 100.0, 0.1);
        let log_part = 3.0 * 600f64.ln();
        assert!(doubled.table[[0, 0, 0]] + log_part >= 2.0 * (b.table[[0, 0, 0]] + log_part) - 1e-9);
    }

    #[test]
    fn subsample_quotas() {
        let data = dataset_with_cell(10);
        let mut bounds = VisitLowerBound { table: Array3::from_elem((2, 2, 2), 100.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(subsample(&data, &bounds, &mut rng).unwrap(), data);

        bounds.table[[0, 0, 1]] = 3.7;
        bounds.table[[1, 1, 0]] = 0.0;
        let trimmed = subsample(&data, &bounds, &mut rng).unwrap();
        let counts = trimmed.counts();
        assert_eq!(counts[[0, 0, 1]], 3);
        assert_eq!(counts[[1, 1, 0]], 0);
    }

    #[test]
    fn subsample_marginals_are_uniform() {
        // tag each record by its successor so retention can be tracked
        let mut data = TransitionDataset::new(2, 10, 1);
        for i in 0..10 {
            data.push(0, Transition { state: 0, action: 0, next: Some(i) }).unwrap();
        }
        let mut bounds = VisitLowerBound { table: Array3::zeros((2, 10, 1)) };
        bounds.table[[0, 0, 0]] = 3.7;
        let seeds = 10_000;
        let mut kept = [0usize; 10];
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = subsample(&data, &bounds, &mut rng).unwrap();
            assert_eq!(t.records(0).len(), 3);
            for r in t.records(0) {
                kept[r.next.unwrap()] += 1;
            }
        }
        for &k in &kept {
            let p = k as f64 / seeds as f64;
            // binomial sd at p = 0.3 over 1e4 draws is about 0.0046
            assert!((p - 0.3).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn empirical_kernel_rows() {
        let mut d = TransitionDataset::new(2, 2, 2);
        for next in [0, 0, 1, 1] {
            d.push(0, Transition { state: 1, action: 0, next: Some(next) }).unwrap();
        }
        d.push(1, Transition { state: 0, action: 0, next: None }).unwrap();
        let m = empirical_kernel(&d);
        assert_eq!(m.row(0, 1, 0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(m.row(0, 0, 0).sum(), 0.0);
        assert_eq!(m.counts[[0, 1, 0]], 4.0);
        assert_eq!(m.counts[[1, 0, 0]], 1.0);
        for h in 0..1 {
            for s in 0..2 {
                for a in 0..2 {
                    let sum = m.row(h, s, a).sum();
                    assert!(sum == 0.0 || sum == 1.0);
                }
            }
        }
    }

    #[test]
    fn penalty_cases() {
        let mode = PenaltyMode::new(PenaltyKind::RewardAgnostic, 16.0).unwrap();
        let row = array![0.5, 0.5];
        let v = array![0.0, 2.0];
        let log_term = confidence_log(4, 5, 3, 0.1);
        assert_eq!(bernstein_penalty(&mode, 0.0, row.view(), v.view(), log_term, 4, 5), 4.0);

        let flat = array![1.0, 1.0];
        let b = bernstein_penalty(&mode, 1e6, row.view(), flat.view(), log_term, 4, 5);
        assert!((b - 16.0 * 4.0 * log_term / 1e6).abs() < 1e-15);

        // Var = 1 under the uniform row over {0, 2}
        let b = bernstein_penalty(&mode, 500.0, row.view(), v.view(), log_term, 4, 5);
        let expected = (16.0 * 600f64.ln() / 500.0).sqrt() + 16.0 * 4.0 * 600f64.ln() / 500.0;
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 1.2712).abs() < 1e-3);

        let free = PenaltyMode::new(PenaltyKind::RewardFree, 16.0).unwrap();
        assert!(bernstein_penalty(&free, 500.0, row.view(), v.view(), log_term, 4, 5) >= b);
        assert_eq!(bernstein_penalty(&PenaltyMode::disabled(), 0.0, row.view(), v.view(), log_term, 4, 5), 0.0);
        assert!(PenaltyMode::new(PenaltyKind::RewardFree, 0.0).is_err());
    }

    #[test]
    fn all_zero_counts_clip_everything() {
        let model = EmpiricalModel {
            kernel: Array4::zeros((3, 2, 2, 2)),
            counts: Array3::zeros((3, 2, 2)),
        };
        let r = RewardFunction::constant(3, 2, 2, 1.0).unwrap();
        let mode = PenaltyMode::new(PenaltyKind::RewardAgnostic, 16.0).unwrap();
        let plan = pessimistic_vi(&model, &r, &mode, 0.1).unwrap();
        assert!(plan.q_values.iter().all(|&q| q == 0.0));
        assert!(plan.values.iter().all(|&v| v == 0.0));
        assert!(plan.policy.actions().iter().all(|&a| a == 0));
        assert!(plan.penalties.iter().all(|&b| b == 3.0));
    }

    #[test]
    fn disabled_penalty_matches_dp() {
        let kernel = Array4::from_shape_fn((2, 2, 2, 2), |(h, s, a, n)| {
            let p = [0.2, 0.9, 0.5, 0.35][(h + s + 2 * a) % 4];
            if n == 0 {
                p
            } else {
                1.0 - p
            }
        });
        let mdp = crate::mdp::TabularMdp::new(kernel.clone(), Array1::from_elem(2, 0.5)).unwrap();
        let r = RewardFunction::new(Array3::from_shape_fn((2, 2, 2), |(h, s, a)| ((h + s * a) % 3) as f64 / 2.0)).unwrap();
        let model = EmpiricalModel {
            kernel,
            counts: Array3::from_elem((2, 2, 2), 1.0),
        };
        let plan = pessimistic_vi(&model, &r, &PenaltyMode::disabled(), 0.1).unwrap();
        let (pi, v) = crate::mdp::optimal_policy_dp(&mdp, &r).unwrap();
        assert_eq!(plan.policy, pi);
        assert_eq!(plan.values, v.values);
    }
}
