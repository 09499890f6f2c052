//! Exploration design by Frank-Wolfe over mixtures of deterministic policies.
//!
//! The objective is the log-barrier `f(mu) = sum log(1/KH + E_mu[d_h(s, a)])`
//! over the cells of a [`DesignScope`]. The linear subproblem (maximize the
//! ratio sum `g`) is a planning problem on an augmented MDP whose extra
//! absorbing state soaks up the mass that the thresholded kernels leak.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array1, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{mixture_occupancy, propagate_occupancy, OccupancyModel};
use crate::mdp::{backward_induction, DeterministicPolicy, MixturePolicy, Occupancy, TabularMdp};

/// Which steps the design objective sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignScope {
    FullHorizon,
    /// A single (zero-based) step.
    SingleStep(usize),
}

impl DesignScope {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        match *self {
            DesignScope::SingleStep(h) if h >= horizon => Err(Error::InvalidArgument(format!(
                "design step {h} outside 0..{horizon}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn steps(&self, horizon: usize) -> Range<usize> {
        match *self {
            DesignScope::FullHorizon => 0..horizon,
            DesignScope::SingleStep(h) => h..h + 1,
        }
    }

    /// Number of `(h, s, a)` cells in the objective: `SAH` or `SA`.
    pub fn num_terms(&self, num_states: usize, num_actions: usize, horizon: usize) -> usize {
        self.steps(horizon).len() * num_states * num_actions
    }
}

/// Iteration budget and support management for [`frank_wolfe`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    /// Planned number of behavior episodes; enters through `1 / KH`.
    pub k: usize,
    /// Starting atom. Defaults to the all-zero-action policy.
    pub init: Option<DeterministicPolicy>,
    /// Atoms lighter than this are dropped after each update.
    pub prune_below: f64,
    /// Overrides the default iteration cap.
    pub max_iterations: Option<usize>,
}

impl DesignConfig {
    pub fn new(k: usize) -> Self {
        DesignConfig {
            k,
            init: None,
            prune_below: 1e-12,
            max_iterations: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("design budget K = {} must be at least 2", self.k)));
        }
        Ok(())
    }

    /// `floor(50 * SAH * log(KH))` for the full horizon, `floor(50 * SA * log(KH))`
    /// for a single step.
    pub fn t_max(&self, scope: DesignScope, num_states: usize, num_actions: usize, horizon: usize) -> usize {
        if let Some(cap) = self.max_iterations {
            return cap;
        }
        let terms = scope.num_terms(num_states, num_actions, horizon) as f64;
        let kh = (self.k * horizon) as f64;
        (50.0 * terms * kh.ln()).floor() as usize
    }
}

fn floor_weight(k: usize, horizon: usize) -> f64 {
    1.0 / (k as f64 * horizon as f64)
}

/// Log-barrier objective evaluated on a precomputed mixture occupancy.
pub fn objective_from_occupancy(mixed: &Occupancy, scope: DesignScope, k: usize) -> f64 {
    let horizon = mixed.dim().0;
    let floor = floor_weight(k, horizon);
    scope
        .steps(horizon)
        .map(|h| mixed.slice(s![h, .., ..]).iter().map(|d| (floor + d).ln()).sum::<f64>())
        .sum()
}

/// `f(mu) = sum_{scope} log(1/KH + E_mu[d_h(s, a)])`.
pub fn objective_f(model: &OccupancyModel, mixture: &MixturePolicy, scope: DesignScope, k: usize) -> f64 {
    objective_from_occupancy(&mixture_occupancy(model, mixture), scope, k)
}

fn ratio_sum(candidate: &Occupancy, mixed: &Occupancy, scope: DesignScope, k: usize) -> f64 {
    let horizon = mixed.dim().0;
    let floor = floor_weight(k, horizon);
    scope
        .steps(horizon)
        .map(|h| {
            candidate
                .slice(s![h, .., ..])
                .iter()
                .zip(mixed.slice(s![h, .., ..]).iter())
                .map(|(d, m)| (floor + d) / (floor + m))
                .sum::<f64>()
        })
        .sum()
}

/// `g(pi, d, mu) = sum_{scope} (1/KH + d_h^pi) / (1/KH + E_mu[d_h])`.
pub fn g_value(
    model: &OccupancyModel,
    candidate: &DeterministicPolicy,
    mixture: &MixturePolicy,
    scope: DesignScope,
    k: usize,
) -> f64 {
    ratio_sum(
        &propagate_occupancy(model, candidate),
        &mixture_occupancy(model, mixture),
        scope,
        k,
    )
}

/// MDP over `S + 1` states whose last state absorbs leaked mass.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMdp {
    pub mdp: TabularMdp,
    /// `[H, S + 1, A]`, zero on the absorbing state and outside the scope.
    pub rewards: Array3<f64>,
}

impl AugmentedMdp {
    pub fn absorbing_state(&self) -> usize {
        self.mdp.num_states() - 1
    }
}

fn augmented_from_occupancy(
    model: &OccupancyModel,
    mixed: &Occupancy,
    scope: DesignScope,
    k: usize,
) -> Result<AugmentedMdp> {
    scope.validate(model.horizon())?;
    let (horizon, ns, na) = (model.horizon(), model.num_states(), model.num_actions());
    let aug = ns;
    let floor = floor_weight(k, horizon);
    let last_transition = match scope {
        DesignScope::FullHorizon => horizon,
        DesignScope::SingleStep(h) => h + 1,
    };

    let mut kernel = Array4::zeros((horizon, ns + 1, na, ns + 1));
    for h in 0..horizon {
        for a in 0..na {
            kernel[[h, aug, a, aug]] = 1.0;
        }
        let estimated = if h < last_transition { model.kernel(h) } else { None };
        for s in 0..ns {
            for a in 0..na {
                let mut kept = 0.0;
                if let Some(kern) = estimated {
                    for (next, &p) in kern.row(s, a).iter().enumerate() {
                        kernel[[h, s, a, next]] = p;
                        kept += p;
                    }
                }
                kernel[[h, s, a, aug]] = (1.0 - kept).max(0.0);
            }
        }
    }

    let mut rewards = Array3::zeros((horizon, ns + 1, na));
    for h in scope.steps(horizon) {
        for s in 0..ns {
            for a in 0..na {
                rewards[[h, s, a]] = 1.0 / (floor + mixed[[h, s, a]]);
            }
        }
    }

    let mut init = Array1::zeros(ns + 1);
    init.slice_mut(s![..ns]).assign(model.rho_hat());
    Ok(AugmentedMdp {
        mdp: TabularMdp::new(kernel, init)?,
        rewards,
    })
}

/// Builds the augmented planning problem for the current mixture.
pub fn build_augmented_mdp(
    model: &OccupancyModel,
    mixture: &MixturePolicy,
    scope: DesignScope,
    k: usize,
) -> Result<AugmentedMdp> {
    augmented_from_occupancy(model, &mixture_occupancy(model, mixture), scope, k)
}

/// Maximizer of `g` over deterministic policies.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub policy: DeterministicPolicy,
    /// `max_pi g(pi, d, mu)`.
    pub g: f64,
    /// Optimal value of the augmented MDP at the estimated initial distribution.
    pub augmented_value: f64,
}

fn best_response_from_occupancy(
    model: &OccupancyModel,
    mixed: &Occupancy,
    scope: DesignScope,
    k: usize,
) -> Result<BestResponse> {
    let augmented = augmented_from_occupancy(model, mixed, scope, k)?;
    let (policy, tables) = backward_induction(&augmented.mdp, &augmented.rewards);
    let augmented_value = tables.initial_value(augmented.mdp.init_dist());
    // g = sum d^pi * r_b + sum (1/KH) * r_b
    let floor = floor_weight(k, model.horizon());
    let constant: f64 = augmented.rewards.iter().map(|r| floor * r).sum();
    Ok(BestResponse {
        policy: policy.restrict_states(model.num_states()),
        g: augmented_value + constant,
        augmented_value,
    })
}

/// Direction-finding step: plan on the augmented MDP.
pub fn best_response(
    model: &OccupancyModel,
    mixture: &MixturePolicy,
    scope: DesignScope,
    k: usize,
) -> Result<BestResponse> {
    best_response_from_occupancy(model, &mixture_occupancy(model, mixture), scope, k)
}

/// `alpha = (g / M - 1) / (g - 1)` where `M` is the number of objective terms.
pub fn step_size(g: f64, num_terms: usize) -> Result<f64> {
    if !(g > 1.0) {
        return Err(Error::InvalidArgument(format!("step size undefined for g = {g}")));
    }
    Ok((g / num_terms as f64 - 1.0) / (g - 1.0))
}

/// One iteration of the design loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub g: f64,
    pub f: f64,
    /// `None` when the stop rule fired (or the cap was hit) at this iteration.
    pub alpha: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub mixture: MixturePolicy,
    /// Number of updates applied.
    pub iterations: usize,
    /// True if the stop rule `g <= 2M` fired.
    pub converged: bool,
    /// `g` of the last best response.
    pub final_g: f64,
    pub t_max: usize,
    pub trace: Vec<TraceRecord>,
}

/// Frank-Wolfe loop: best response, step size, stop test, update.
///
/// Stops as soon as `max_pi g <= 2M`, or after `t_max` updates with the stop
/// test still failing (reported through `converged = false`).
pub fn frank_wolfe(model: &OccupancyModel, scope: DesignScope, config: &DesignConfig) -> Result<DesignOutcome> {
    config.validate()?;
    scope.validate(model.horizon())?;
    let (horizon, ns, na) = (model.horizon(), model.num_states(), model.num_actions());
    let init = match &config.init {
        Some(p) => {
            if p.horizon() != horizon || p.num_states() != ns || p.actions().iter().any(|&a| a >= na) {
                return Err(Error::InvalidArgument("initial policy does not fit the model".into()));
            }
            p.clone()
        }
        None => DeterministicPolicy::constant(horizon, ns, 0),
    };
    let terms = scope.num_terms(ns, na, horizon);
    let threshold = 2.0 * terms as f64;
    let t_max = config.t_max(scope, ns, na, horizon);

    let mut cache: HashMap<DeterministicPolicy, Occupancy> = HashMap::new();
    cache.insert(init.clone(), propagate_occupancy(model, &init));
    let mut mixture = MixturePolicy::dirac(init);
    let mut trace = Vec::new();

    let mut iterations = 0;
    let mut converged = false;
    let mut final_g = f64::NAN;
    for t in 0..=t_max {
        let mut mixed = Array3::zeros((horizon, ns, na));
        for (w, pi) in mixture.atoms() {
            mixed.scaled_add(*w, &cache[pi]);
        }
        let f = objective_from_occupancy(&mixed, scope, config.k);
        let br = best_response_from_occupancy(model, &mixed, scope, config.k)?;
        final_g = br.g;
        if br.g <= threshold {
            converged = true;
        }
        if converged || t == t_max {
            trace.push(TraceRecord {
                t,
                g: br.g,
                f,
                alpha: None,
                support: mixture.len(),
            });
            break;
        }
        let alpha = step_size(br.g, terms)?;
        trace.push(TraceRecord {
            t,
            g: br.g,
            f,
            alpha: Some(alpha),
            support: mixture.len(),
        });
        cache
            .entry(br.policy.clone())
            .or_insert_with(|| propagate_occupancy(model, &br.policy));
        mixture.mix_in(&br.policy, alpha, config.prune_below);
        iterations += 1;
    }
    if !converged {
        log::warn!("frank-wolfe ({scope:?}) hit the cap of {t_max} updates with g = {final_g}");
    }
    Ok(DesignOutcome {
        mixture,
        iterations,
        converged,
        final_g,
        t_max,
        trace,
    })
}
