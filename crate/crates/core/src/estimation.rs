//! Empirical occupancy model: estimated initial distribution, thresholded
//! per-step kernels, and forward propagation of occupancies for arbitrary
//! policies and mixtures.

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, MixturePolicy, Occupancy, TabularMdp, PROB_TOL};
use crate::par::{self, Execution};

/// How the count threshold `xi` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum XiRule {
    /// `max(1, 2 log(HSA / delta))`.
    #[default]
    Practical,
    /// `c_xi * H^3 S^3 A^3 * log(HSA / delta)`.
    Theoretical { c_xi: f64 },
    Fixed { value: f64 },
}

impl XiRule {
    pub fn value(&self, horizon: usize, num_states: usize, num_actions: usize, delta: f64) -> f64 {
        let hsa = (horizon * num_states * num_actions) as f64;
        let log_term = (hsa / delta).ln();
        match *self {
            XiRule::Practical => (2.0 * log_term).max(1.0),
            XiRule::Theoretical { c_xi } => c_xi * hsa.powi(3) * log_term,
            XiRule::Fixed { value } => value,
        }
    }
}

/// Empirical initial distribution from observed first states.
pub fn estimate_initial_distribution(initial_states: &[usize], num_states: usize) -> Result<Array1<f64>> {
    if initial_states.is_empty() {
        return Err(Error::InvalidArgument("no initial states observed".into()));
    }
    let mut rho = Array1::zeros(num_states);
    for &s in initial_states {
        if s >= num_states {
            return Err(Error::InvalidArgument(format!("state {s} out of range")));
        }
        rho[s] += 1.0;
    }
    rho /= initial_states.len() as f64;
    Ok(rho)
}

/// Sub-stochastic kernel `P_h(s' | s, a)` for one step, together with the
/// visit counts it was built from. Rows with too few visits are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedKernel {
    rows: Array3<f64>,
    counts: Array2<u64>,
}

impl ThresholdedKernel {
    /// Validates shapes and the row invariants against `xi`.
    pub fn from_parts(rows: Array3<f64>, counts: Array2<u64>, xi: f64) -> Result<Self> {
        let (ns, na, next) = rows.dim();
        if next != ns || counts.dim() != (ns, na) {
            return Err(Error::InvalidModel("kernel and count shapes disagree".into()));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = rows.slice(s![s, a, ..]);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidModel(format!("negative entry in row ({s}, {a})")));
                }
                let sum = row.sum();
                if sum > 1.0 + PROB_TOL {
                    return Err(Error::InvalidModel(format!("row ({s}, {a}) sums to {sum}")));
                }
                if sum > 0.0 && (counts[[s, a]] as f64) <= xi {
                    return Err(Error::InvalidModel(format!(
                        "row ({s}, {a}) is nonzero but its count {} does not exceed xi = {xi}",
                        counts[[s, a]]
                    )));
                }
            }
        }
        Ok(ThresholdedKernel { rows, counts })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        ThresholdedKernel {
            rows: Array3::zeros((num_states, num_actions, num_states)),
            counts: Array2::zeros((num_states, num_actions)),
        }
    }

    pub fn rows(&self) -> &Array3<f64> {
        &self.rows
    }

    pub fn row(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.rows.slice(s![s, a, ..])
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }
}

/// Empirical kernel from `(s, a, s')` transitions observed at one step. A row
/// is kept only if its visit count is strictly greater than `xi`.
pub fn build_thresholded_kernel(
    num_states: usize,
    num_actions: usize,
    transitions: &[(usize, usize, usize)],
    xi: f64,
) -> Result<ThresholdedKernel> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {xi} must be nonnegative")));
    }
    let mut rows = Array3::<f64>::zeros((num_states, num_actions, num_states));
    let mut counts = Array2::<u64>::zeros((num_states, num_actions));
    for &(s, a, next) in transitions {
        if s >= num_states || next >= num_states || a >= num_actions {
            return Err(Error::InvalidArgument(format!("transition ({s}, {a}, {next}) out of range")));
        }
        rows[[s, a, next]] += 1.0;
        counts[[s, a]] += 1;
    }
    for s in 0..num_states {
        for a in 0..num_actions {
            let n = counts[[s, a]];
            let mut row = rows.slice_mut(s![s, a, ..]);
            if (n as f64) > xi {
                row /= n as f64;
            } else {
                row.fill(0.0);
            }
        }
    }
    Ok(ThresholdedKernel { rows, counts })
}

/// Empirical initial distribution plus thresholded kernels for steps
/// `0..H-1`. Steps whose kernel has not been estimated yet behave as all-zero
/// kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyModel {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rho_hat: Array1<f64>,
    kernels: Vec<ThresholdedKernel>,
    xi: f64,
}

impl OccupancyModel {
    /// A model with only the initial distribution estimated.
    pub fn new(horizon: usize, num_actions: usize, rho_hat: Array1<f64>, xi: f64) -> Result<Self> {
        Self::from_parts(horizon, num_actions, rho_hat, Vec::new(), xi)
    }

    pub fn from_parts(
        horizon: usize,
        num_actions: usize,
        rho_hat: Array1<f64>,
        kernels: Vec<ThresholdedKernel>,
        xi: f64,
    ) -> Result<Self> {
        let num_states = rho_hat.len();
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("S, A and H must all be positive".into()));
        }
        if rho_hat.iter().any(|p| *p < 0.0) || (rho_hat.sum() - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidModel("estimated initial distribution is not a distribution".into()));
        }
        if !(xi >= 0.0) {
            return Err(Error::InvalidModel(format!("threshold {xi} must be nonnegative")));
        }
        if kernels.len() > horizon.saturating_sub(1) {
            return Err(Error::InvalidModel(format!(
                "{} kernels supplied for horizon {horizon}",
                kernels.len()
            )));
        }
        for k in &kernels {
            if k.rows.dim() != (num_states, num_actions, num_states) {
                return Err(Error::InvalidModel("kernel shape disagrees with S, A".into()));
            }
        }
        Ok(OccupancyModel {
            num_states,
            num_actions,
            horizon,
            rho_hat,
            kernels,
            xi,
        })
    }

    /// The model whose estimates coincide with the true MDP. Counts are
    /// recorded as `u64::MAX` and the threshold as zero.
    pub fn exact(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let kernels = (0..mdp.horizon().saturating_sub(1))
            .map(|h| ThresholdedKernel {
                rows: mdp.kernel().slice(s![h, .., .., ..]).to_owned(),
                counts: Array2::from_elem((ns, na), u64::MAX),
            })
            .collect();
        OccupancyModel {
            num_states: ns,
            num_actions: na,
            horizon: mdp.horizon(),
            rho_hat: mdp.init_dist().clone(),
            kernels,
            xi: 0.0,
        }
    }

    /// Appends the kernel for the next unestimated step.
    pub fn push_kernel(&mut self, kernel: ThresholdedKernel) -> Result<()> {
        if self.kernels.len() + 1 >= self.horizon {
            return Err(Error::InvalidModel("all H-1 kernels already estimated".into()));
        }
        if kernel.rows.dim() != (self.num_states, self.num_actions, self.num_states) {
            return Err(Error::InvalidModel("kernel shape disagrees with S, A".into()));
        }
        self.kernels.push(kernel);
        Ok(())
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

    pub fn rho_hat(&self) -> &Array1<f64> {
        &self.rho_hat
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn kernels(&self) -> &[ThresholdedKernel] {
        &self.kernels
    }

    /// Kernel for step `h`, if estimated.
    pub fn kernel(&self, h: usize) -> Option<&ThresholdedKernel> {
        self.kernels.get(h)
    }

    pub fn is_complete(&self) -> bool {
        self.kernels.len() + 1 == self.horizon
    }
}

/// Estimated occupancy `d_h(s, a)` for all steps, by forward recursion
/// through the thresholded kernels. Mass leaks wherever a row is zero.
pub fn propagate_occupancy(model: &OccupancyModel, policy: &DeterministicPolicy) -> Occupancy {
    let (horizon, ns, na) = (model.horizon, model.num_states, model.num_actions);
    let mut occ = Array3::zeros((horizon, ns, na));
    let mut state_mass = model.rho_hat.clone();
    for h in 0..horizon {
        for s in 0..ns {
            occ[[h, s, policy.action(h, s)]] = state_mass[s];
        }
        if h + 1 == horizon {
            break;
        }
        let mut next = Array1::zeros(ns);
        if let Some(kernel) = model.kernel(h) {
            for s in 0..ns {
                let a = policy.action(h, s);
                let m = occ[[h, s, a]];
                if m != 0.0 {
                    next.scaled_add(m, &kernel.row(s, a));
                }
            }
        }
        state_mass = next;
    }
    occ
}

/// `E_{pi ~ mu}[d_h^pi(s, a)]`, atoms propagated on `exec`.
pub fn mixture_occupancy_with(model: &OccupancyModel, mixture: &MixturePolicy, exec: Execution) -> Occupancy {
    let parts = par::map_slice(exec, mixture.atoms(), |(w, pi)| {
        let mut d = propagate_occupancy(model, pi);
        d *= *w;
        d
    });
    let mut total = Array3::zeros((model.horizon, model.num_states, model.num_actions));
    for d in &parts {
        total += d;
    }
    total
}

pub fn mixture_occupancy(model: &OccupancyModel, mixture: &MixturePolicy) -> Occupancy {
    mixture_occupancy_with(model, mixture, Execution::Sequential)
}

/// Total mass `sum_{s,a} d_h(s, a)` per step.
pub fn mass_per_step(occ: &Occupancy) -> Vec<f64> {
    occ.outer_iter().map(|step| step.sum()).collect()
}
