//! Random benchmark instances.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{OccupancyModel, ThresholdedKernel};
use crate::mdp::{RewardFunction, TabularMdp};
use crate::rng::SeedStream;

fn default_concentration() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    /// Symmetric Dirichlet concentration for kernel rows and the initial
    /// distribution.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Fixes the instance; when absent the experiment derives one per seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("generator needs S, A, H >= 1".into()));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "concentration {} must be positive",
                self.concentration
            )));
        }
        Ok(())
    }
}

/// Draws a symmetric Dirichlet vector by normalizing Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(len: usize, concentration: f64, rng: &mut R) -> Array1<f64> {
    if len == 1 {
        return Array1::ones(1);
    }
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated upstream");
    loop {
        let draws: Array1<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let total = draws.sum();
        if total > 0.0 && total.is_finite() {
            return draws / total;
        }
    }
}

pub fn random_reward<R: Rng + ?Sized>(horizon: usize, states: usize, actions: usize, rng: &mut R) -> RewardFunction {
    let table = Array3::from_shape_simple_fn((horizon, states, actions), || rng.random::<f64>());
    RewardFunction::new(table).expect("uniform draws lie in [0, 1)")
}

/// Random MDP plus `num_rewards` i.i.d. uniform reward tables.
pub fn generate_random_mdp(spec: &GeneratorSpec, num_rewards: usize, stream: SeedStream) -> Result<(TabularMdp, Vec<RewardFunction>)> {
    spec.validate()?;
    let (h, ns, na) = (spec.horizon, spec.states, spec.actions);
    let stream = spec.seed.map_or(stream, SeedStream::new);
    let mut rng = stream.child(0).rng();
    let mut kernel = Array4::zeros((h, ns, na, ns));
    for step in 0..h {
        for s in 0..ns {
            for a in 0..na {
                let row = dirichlet(ns, spec.concentration, &mut rng);
                kernel.slice_mut(ndarray::s![step, s, a, ..]).assign(&row);
            }
        }
    }
    let rho = dirichlet(ns, spec.concentration, &mut rng);
    let mdp = TabularMdp::new(kernel, rho)?;
    let mut reward_rng = stream.child(1).rng();
    let rewards = (0..num_rewards)
        .map(|_| random_reward(h, ns, na, &mut reward_rng))
        .collect();
    Ok((mdp, rewards))
}

/// Random occupancy model with sub-stochastic rows: each row is a Dirichlet
/// draw scaled by a factor in `[0.5, 1]`, and a `zero_fraction` of rows is
/// zeroed. Counts are recorded as 1 for kept rows and 0 otherwise, with
/// threshold 0.
pub fn random_occupancy_model<R: Rng + ?Sized>(
    states: usize,
    actions: usize,
    horizon: usize,
    zero_fraction: f64,
    rng: &mut R,
) -> Result<OccupancyModel> {
    let rho = dirichlet(states, 1.0, rng);
    let mut kernels = Vec::with_capacity(horizon.saturating_sub(1));
    for _ in 1..horizon {
        let mut rows = Array3::zeros((states, actions, states));
        let mut counts = Array2::zeros((states, actions));
        for s in 0..states {
            for a in 0..actions {
                if rng.random::<f64>() < zero_fraction {
                    continue;
                }
                let scale = 0.5 + 0.5 * rng.random::<f64>();
                let row = dirichlet(states, 1.0, rng) * scale;
                rows.slice_mut(ndarray::s![s, a, ..]).assign(&row);
                counts[[s, a]] = 1;
            }
        }
        kernels.push(ThresholdedKernel::from_parts(rows, counts, 0.0)?);
    }
    OccupancyModel::from_parts(horizon, actions, rho, kernels, 0.0)
}
