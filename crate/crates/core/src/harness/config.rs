use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::XiRule;
use crate::io::read_json;
use crate::offline::{PenaltyKind, PenaltyMode};
use crate::par::Execution;

use super::generator::GeneratorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MdpSource {
    Generate(GeneratorSpec),
    /// MDP document; its embedded rewards are used by [`RewardSource::Embedded`].
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSource {
    /// `count` i.i.d. uniform reward tables per seed.
    Random { count: usize },
    /// JSON array of `[H][S][A]` tables.
    File { path: PathBuf },
    /// Rewards stored in the MDP document.
    Embedded,
}

/// One budget or a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budgets {
    One(usize),
    Sweep(Vec<usize>),
}

impl Budgets {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Budgets::One(k) => vec![*k],
            Budgets::Sweep(ks) => ks.clone(),
        }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_c_b() -> f64 {
    16.0
}

fn default_penalty() -> PenaltyKind {
    PenaltyKind::RewardAgnostic
}

fn default_rewards() -> RewardSource {
    RewardSource::Random { count: 5 }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    /// Behavior episodes `K`.
    pub k: Budgets,
    /// Episodes per occupancy-estimation round; `None` means `N = K`.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub xi: XiRule,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_c_b")]
    pub c_b: f64,
    #[serde(default = "default_penalty")]
    pub penalty: PenaltyKind,
    #[serde(default = "yes")]
    pub share_delta: bool,
    #[serde(default = "default_rewards")]
    pub rewards: RewardSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub execution: Execution,
    /// When false, `wall_ms` is written as 0 so reports are byte-reproducible.
    #[serde(default = "yes")]
    pub record_wall_time: bool,
    #[serde(default)]
    pub write_trace: bool,
}

impl ExperimentConfig {
    /// Defaults everywhere except the instance and the budget.
    pub fn new(mdp: MdpSource, k: Budgets) -> Self {
        ExperimentConfig {
            mdp,
            k,
            n: None,
            xi: XiRule::default(),
            delta: default_delta(),
            c_b: default_c_b(),
            penalty: default_penalty(),
            share_delta: true,
            rewards: default_rewards(),
            seeds: default_seeds(),
            master_seed: 0,
            output_dir: None,
            execution: Execution::default(),
            record_wall_time: true,
            write_trace: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn n_for(&self, k: usize) -> usize {
        self.n.unwrap_or(k)
    }

    pub fn penalty_mode(&self) -> Result<PenaltyMode> {
        PenaltyMode::new(self.penalty, self.c_b).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let ks = self.k.values();
        if ks.is_empty() {
            return Err(Error::InvalidConfig("no budget K given".into()));
        }
        if let Some(&k) = ks.iter().find(|&&k| k < 2) {
            return Err(Error::InvalidConfig(format!("K = {k} must be at least 2")));
        }
        if self.n == Some(0) {
            return Err(Error::InvalidConfig("N must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta = {} outside (0, 1)", self.delta)));
        }
        self.penalty_mode()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        match &self.xi {
            XiRule::Fixed { value } if !(*value >= 0.0) => {
                return Err(Error::InvalidConfig(format!("xi = {value} must be nonnegative")))
            }
            XiRule::Theoretical { c_xi } if !(*c_xi > 0.0) => {
                return Err(Error::InvalidConfig(format!("c_xi = {c_xi} must be positive")))
            }
            _ => {}
        }
        match &self.mdp {
            MdpSource::Generate(spec) => spec.validate()?,
            MdpSource::File { .. } => {}
        }
        if matches!(self.rewards, RewardSource::Embedded) && !matches!(self.mdp, MdpSource::File { .. }) {
            return Err(Error::InvalidConfig("embedded rewards need an MDP file".into()));
        }
        Ok(())
    }
}
