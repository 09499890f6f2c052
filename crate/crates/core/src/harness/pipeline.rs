//! The three stages of the learner. Stages 1.1 and 1.2 take no reward input.

use ndarray::Zip;

use crate::design::{frank_wolfe, DesignConfig, DesignOutcome, DesignScope};
use crate::error::{Error, Result};
use crate::estimation::{build_thresholded_kernel, estimate_initial_distribution, OccupancyModel};
use crate::mdp::{MixturePolicy, RewardFunction};
use crate::offline::{
    empirical_kernel, pessimistic_vi, subsample, visit_lower_bounds, PenaltyMode, PlanResult, TransitionDataset,
    VisitLowerBound,
};
use crate::par::{map_range, Execution};
use crate::rng::SeedStream;

use super::simulator::Simulator;

/// Output of occupancy estimation: the model and one design per round.
#[derive(Debug, Clone)]
pub struct Stage11Output {
    pub model: OccupancyModel,
    pub designs: Vec<DesignOutcome>,
}

/// Draws `N` initial states, then for each step `h < H - 1` designs an
/// exploration mixture for step `h`, rolls out `N` episodes of length `h + 1`
/// and appends the thresholded kernel `P_h`. Consumes `N * H` episodes.
pub fn run_stage1_1(sim: &Simulator<'_>, n: usize, xi: f64, k: usize, stream: SeedStream) -> Result<Stage11Output> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    let (horizon, ns, na) = (sim.horizon(), sim.num_states(), sim.num_actions());
    let initial = sim.draw_initial_states(n, stream.child(0));
    let rho_hat = estimate_initial_distribution(&initial, ns)?;
    let mut model = OccupancyModel::new(horizon, na, rho_hat, xi)?;
    let design = DesignConfig::new(k);
    let mut designs = Vec::with_capacity(horizon.saturating_sub(1));
    for h in 0..horizon.saturating_sub(1) {
        let outcome = frank_wolfe(&model, DesignScope::SingleStep(h), &design)?;
        let episodes = sim.rollouts(&outcome.mixture, h + 1, n, stream.child(h as u64 + 1))?;
        let transitions: Vec<(usize, usize, usize)> = episodes
            .iter()
            .map(|ep| {
                let (s, a) = ep.pairs[h];
                let next = ep.final_state.expect("prefix episodes end with a successor");
                (s, a, next)
            })
            .collect();
        model.push_kernel(build_thresholded_kernel(ns, na, &transitions, xi)?)?;
        designs.push(outcome);
    }
    Ok(Stage11Output { model, designs })
}

#[derive(Debug, Clone)]
pub struct Stage12Output {
    pub mixture: MixturePolicy,
    pub dataset: TransitionDataset,
    pub design: DesignOutcome,
}

/// Full-horizon design followed by `K` behavior episodes of length `H`.
pub fn run_stage1_2(sim: &Simulator<'_>, model: &OccupancyModel, k: usize, stream: SeedStream) -> Result<Stage12Output> {
    if !model.is_complete() {
        return Err(Error::InvalidArgument("occupancy model lacks kernels".into()));
    }
    let design = frank_wolfe(model, DesignScope::FullHorizon, &DesignConfig::new(k))?;
    let episodes = sim.rollouts(&design.mixture, sim.horizon(), k, stream)?;
    let dataset = TransitionDataset::from_trajectories(sim.horizon(), sim.num_states(), sim.num_actions(), &episodes)?;
    Ok(Stage12Output {
        mixture: design.mixture.clone(),
        dataset,
        design,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Config {
    pub n: usize,
    pub k: usize,
    pub xi: f64,
    pub delta: f64,
    pub penalty: PenaltyMode,
    /// Use `delta / m_reward` in the penalties.
    pub share_delta: bool,
}

impl Stage2Config {
    /// Confidence level handed to the planner for `num_rewards` rewards.
    pub fn penalty_delta(&self, num_rewards: usize) -> f64 {
        if self.share_delta && num_rewards > 1 {
            self.delta / num_rewards as f64
        } else {
            self.delta
        }
    }
}

/// Stage 2 result for all rewards, with the shared visit bounds.
#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub bounds: VisitLowerBound,
    pub plans: Vec<PlanResult>,
}

/// Computes the visit bounds once, then per reward `i`: subsample with
/// substream `i`, fit the empirical kernel and run pessimistic VI.
pub fn run_stage2(
    model: &OccupancyModel,
    mixture: &MixturePolicy,
    dataset: &TransitionDataset,
    rewards: &[RewardFunction],
    config: &Stage2Config,
    stream: SeedStream,
    exec: Execution,
) -> Result<Stage2Output> {
    let bounds = visit_lower_bounds(model, mixture, config.k, config.n, config.xi, config.delta)?;
    let counts = dataset.counts();
    let mut effective = bounds.table.clone();
    Zip::from(&mut effective)
        .and(&counts)
        .for_each(|m, &c| *m = m.min(c as f64));
    let delta = config.penalty_delta(rewards.len());
    let plans = map_range(exec, rewards.len(), |i| {
        let trimmed = subsample(dataset, &bounds, &mut stream.substream(i as u64))?;
        let model = empirical_kernel(&trimmed).with_counts(effective.clone())?;
        pessimistic_vi(&model, &rewards[i], &config.penalty, delta)
    });
    Ok(Stage2Output {
        bounds,
        plans: plans.into_iter().collect::<Result<Vec<_>>>()?,
    })
}
