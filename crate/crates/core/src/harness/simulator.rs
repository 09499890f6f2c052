use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::Result;
use crate::mdp::{sample_episode, MixturePolicy, TabularMdp, Trajectory};
use crate::par::{map_range, Execution};
use crate::rng::SeedStream;

/// Episode oracle over a hidden MDP.
///
/// Learners see only the sizes and the sampled episodes. Every episode, full
/// or partial, and every bare initial-state draw counts once against the
/// budget.
#[derive(Debug)]
pub struct Simulator<'a> {
    mdp: &'a TabularMdp,
    episodes: AtomicU64,
    exec: Execution,
}

impl<'a> Simulator<'a> {
    pub fn new(mdp: &'a TabularMdp, exec: Execution) -> Self {
        Simulator {
            mdp,
            episodes: AtomicU64::new(0),
            exec,
        }
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    pub fn horizon(&self) -> usize {
        self.mdp.horizon()
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn episodes_used(&self) -> u64 {
        self.episodes.load(Ordering::Relaxed)
    }

    /// `n` draws of `s_1`; episode `i` uses substream `i`.
    pub fn draw_initial_states(&self, n: usize, stream: SeedStream) -> Vec<usize> {
        self.episodes.fetch_add(n as u64, Ordering::Relaxed);
        map_range(self.exec, n, |i| self.mdp.sample_initial(&mut stream.substream(i as u64)))
    }

    /// `n` rollouts of length `len` under the mixture; episode `i` uses
    /// substream `i`.
    pub fn rollouts(&self, mixture: &MixturePolicy, len: usize, n: usize, stream: SeedStream) -> Result<Vec<Trajectory>> {
        let episodes: Vec<Result<Trajectory>> = map_range(self.exec, n, |i| {
            sample_episode(self.mdp, mixture, len, &mut stream.substream(i as u64))
        });
        let episodes = episodes.into_iter().collect::<Result<Vec<_>>>()?;
        self.episodes.fetch_add(n as u64, Ordering::Relaxed);
        Ok(episodes)
    }
}
