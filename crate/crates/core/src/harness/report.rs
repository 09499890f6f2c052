use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::design::TraceRecord;
use crate::error::{Error, Result};
use crate::io::{load_mdp, read_json, save_mdp, write_json};
use crate::mdp::{optimal_policy_dp, policy_value, DeterministicPolicy, RewardFunction, TabularMdp};
use crate::par::{map_slice, Execution};
use crate::rng::SeedStream;

use super::config::{ExperimentConfig, MdpSource, RewardSource};
use super::generator::{generate_random_mdp, random_reward};
use super::pipeline::{run_stage1_1, run_stage1_2, run_stage2, Stage2Config};
use super::simulator::Simulator;

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub reward_id: usize,
    pub v_star: f64,
    pub v_hat_policy: f64,
    pub gap: f64,
    pub n_tot: u64,
    pub fw_full_iters: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLine {
    pub seed: u64,
    pub k: usize,
    /// `"step_<h>"` for an estimation round, `"full"` for the behavior design.
    pub design: String,
    #[serde(flatten)]
    pub record: TraceRecord,
}

/// Everything measured in one (seed, K) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub k: usize,
    pub n: usize,
    pub xi: f64,
    pub episodes_used: u64,
    /// `K + N * H`.
    pub n_tot: u64,
    pub stage11_iterations: Vec<usize>,
    pub stage11_converged: Vec<bool>,
    pub fw_full_iters: usize,
    pub fw_full_converged: bool,
    /// Cells `(h, s, a)` compared against the visit lower bound.
    pub bound_cells: usize,
    /// Cells where the behavior data reached the bound.
    pub bound_cells_covered: usize,
    /// Cells with a strictly positive bound.
    pub positive_bound_cells: usize,
    pub positive_bound_cells_covered: usize,
    pub wall_ms: u64,
    pub rows: Vec<ReportRow>,
    pub policies: Vec<DeterministicPolicy>,
    pub trace: Vec<TraceLine>,
}

impl RunRecord {
    pub fn budget_ok(&self) -> bool {
        self.episodes_used == self.n_tot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub k: usize,
    pub n: usize,
    pub n_tot: u64,
    pub runs: usize,
    pub rows: usize,
    pub gap_median: f64,
    pub gap_q1: f64,
    pub gap_q3: f64,
    pub gap_mean: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub fw_full_converged: f64,
    pub stage11_converged: f64,
    pub bound_coverage: f64,
    pub budget_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Ordered by seed (config order), then K (config order).
    pub runs: Vec<RunRecord>,
    pub summary: Vec<BudgetSummary>,
    /// True MDP and rewards per seed, in seed order.
    pub instances: Vec<(u64, TabularMdp, Vec<RewardFunction>)>,
}

impl ExperimentReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.runs.iter().flat_map(|r| r.rows.iter())
    }

    pub fn summary_for(&self, k: usize) -> Option<&BudgetSummary> {
        self.summary.iter().find(|s| s.k == k)
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile(&sorted, 0.5)
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

fn summarize(k: usize, runs: &[&RunRecord]) -> BudgetSummary {
    let mut gaps: Vec<f64> = runs.iter().flat_map(|r| r.rows.iter().map(|row| row.gap)).collect();
    gaps.sort_by(f64::total_cmp);
    let rounds: usize = runs.iter().map(|r| r.stage11_converged.len()).sum();
    let rounds_ok: usize = runs
        .iter()
        .map(|r| r.stage11_converged.iter().filter(|&&c| c).count())
        .sum();
    let cells: usize = runs.iter().map(|r| r.bound_cells).sum();
    let covered: usize = runs.iter().map(|r| r.bound_cells_covered).sum();
    BudgetSummary {
        k,
        n: runs.first().map_or(0, |r| r.n),
        n_tot: runs.first().map_or(0, |r| r.n_tot),
        runs: runs.len(),
        rows: gaps.len(),
        gap_median: quantile(&gaps, 0.5),
        gap_q1: quantile(&gaps, 0.25),
        gap_q3: quantile(&gaps, 0.75),
        gap_mean: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
        gap_min: gaps.first().copied().unwrap_or(f64::NAN),
        gap_max: gaps.last().copied().unwrap_or(f64::NAN),
        fw_full_converged: fraction(runs.iter().filter(|r| r.fw_full_converged).count(), runs.len()),
        stage11_converged: fraction(rounds_ok, rounds),
        bound_coverage: fraction(covered, cells),
        budget_ok: runs.iter().all(|r| r.budget_ok()),
    }
}

/// `(V*_1(rho), V^pi_1(rho))` on the true MDP.
pub fn evaluate_policy(mdp: &TabularMdp, reward: &RewardFunction, policy: &DeterministicPolicy) -> Result<(f64, f64)> {
    let (_, optimal) = optimal_policy_dp(mdp, reward)?;
    let achieved = policy_value(mdp, reward, policy)?;
    Ok((optimal.initial_value(mdp.init_dist()), achieved.initial_value(mdp.init_dist())))
}

fn load_rewards(path: &Path, mdp: &TabularMdp) -> Result<Vec<RewardFunction>> {
    let tables: Vec<Array3<f64>> = read_json(path)?;
    tables
        .into_iter()
        .map(|t| {
            let r = RewardFunction::new(t)?;
            r.check_shape(mdp)?;
            Ok(r)
        })
        .collect()
}

/// The true instance for one seed. Stream `child(0)` of the seed stream is
/// reserved for it.
fn instance_for_seed(
    config: &ExperimentConfig,
    loaded: Option<&(TabularMdp, Vec<RewardFunction>)>,
    stream: SeedStream,
) -> Result<(TabularMdp, Vec<RewardFunction>)> {
    let stream = stream.child(0);
    let random_count = match config.rewards {
        RewardSource::Random { count } => count,
        _ => 0,
    };
    let (mdp, mut rewards) = match (&config.mdp, loaded) {
        (MdpSource::Generate(spec), _) => generate_random_mdp(spec, random_count, stream)?,
        (MdpSource::File { .. }, Some((mdp, embedded))) => {
            let rewards = match config.rewards {
                RewardSource::Embedded => embedded.clone(),
                _ => {
                    let mut rng = stream.child(1).rng();
                    (0..random_count)
                        .map(|_| random_reward(mdp.horizon(), mdp.num_states(), mdp.num_actions(), &mut rng))
                        .collect()
                }
            };
            (mdp.clone(), rewards)
        }
        (MdpSource::File { path }, None) => {
            return Err(Error::InvalidConfig(format!("MDP file {} was not loaded", path.display())))
        }
    };
    if let RewardSource::File { path } = &config.rewards {
        rewards = load_rewards(path, &mdp)?;
    }
    Ok((mdp, rewards))
}

/// Runs all three stages for one seed and budget, then scores each learned
/// policy against the exact optimum.
pub fn run_single(
    mdp: &TabularMdp,
    rewards: &[RewardFunction],
    config: &ExperimentConfig,
    seed: u64,
    k: usize,
    stream: SeedStream,
    exec: Execution,
) -> Result<RunRecord> {
    let start = Instant::now();
    let (horizon, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let n = config.n_for(k);
    let xi = config.xi.value(horizon, ns, na, config.delta);
    let sim = Simulator::new(mdp, exec);

    let stage11 = run_stage1_1(&sim, n, xi, k, stream.child(0))?;
    let stage12 = run_stage1_2(&sim, &stage11.model, k, stream.child(1))?;
    let stage2_config = Stage2Config {
        n,
        k,
        xi,
        delta: config.delta,
        penalty: config.penalty_mode()?,
        share_delta: config.share_delta,
    };
    let stage2 = run_stage2(
        &stage11.model,
        &stage12.mixture,
        &stage12.dataset,
        rewards,
        &stage2_config,
        stream.child(2),
        exec,
    )?;

    let counts = stage12.dataset.counts();
    let (mut covered, mut positive, mut positive_covered) = (0, 0, 0);
    Zip::from(&counts).and(&stage2.bounds.table).for_each(|&c, &b| {
        let hit = c as f64 >= b;
        covered += usize::from(hit);
        if b > 0.0 {
            positive += 1;
            positive_covered += usize::from(hit);
        }
    });

    let episodes_used = sim.episodes_used();
    let n_tot = (k + n * horizon) as u64;
    if episodes_used != n_tot {
        log::error!("seed {seed}, K = {k}: used {episodes_used} episodes, expected {n_tot}");
    }
    let fw_full_iters = stage12.design.iterations;
    let wall_ms = if config.record_wall_time {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut rows = Vec::with_capacity(rewards.len());
    for (reward_id, (reward, plan)) in rewards.iter().zip(&stage2.plans).enumerate() {
        let (v_star, v_hat_policy) = evaluate_policy(mdp, reward, &plan.policy)?;
        rows.push(ReportRow {
            seed,
            reward_id,
            v_star,
            v_hat_policy,
            gap: v_star - v_hat_policy,
            n_tot,
            fw_full_iters,
            wall_ms,
        });
    }

    let trace = if config.write_trace {
        let rounds = stage11
            .designs
            .iter()
            .enumerate()
            .map(|(h, d)| (format!("step_{h}"), d))
            .chain(std::iter::once(("full".to_string(), &stage12.design)));
        rounds
            .flat_map(|(design, outcome)| {
                outcome.trace.iter().map(move |record| TraceLine {
                    seed,
                    k,
                    design: design.clone(),
                    record: record.clone(),
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(RunRecord {
        seed,
        k,
        n,
        xi,
        episodes_used,
        n_tot,
        stage11_iterations: stage11.designs.iter().map(|d| d.iterations).collect(),
        stage11_converged: stage11.designs.iter().map(|d| d.converged).collect(),
        fw_full_iters,
        fw_full_converged: stage12.design.converged,
        bound_cells: counts.len(),
        bound_cells_covered: covered,
        positive_bound_cells: positive,
        positive_bound_cells_covered: positive_covered,
        wall_ms,
        rows,
        policies: stage2.plans.into_iter().map(|p| p.policy).collect(),
        trace,
    })
}

/// Runs every seed and budget. Seeds run concurrently under
/// [`Execution::Parallel`]; results are deterministic in `(config, master_seed)`.
/// Writes the output files when `output_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let loaded = match &config.mdp {
        MdpSource::File { path } => Some(load_mdp(path)?),
        MdpSource::Generate(_) => None,
    };
    let budgets = config.k.values();
    let root = SeedStream::new(config.master_seed);
    let exec = config.execution;
    let per_seed = map_slice(exec, &config.seeds, |&seed| -> Result<_> {
        let stream = root.child(seed);
        let (mdp, rewards) = instance_for_seed(config, loaded.as_ref(), stream)?;
        let runs = budgets
            .iter()
            .enumerate()
            .map(|(i, &k)| run_single(&mdp, &rewards, config, seed, k, stream.child(1 + i as u64), exec))
            .collect::<Result<Vec<_>>>()?;
        Ok((runs, (seed, mdp, rewards)))
    });
    let mut runs = Vec::new();
    let mut instances = Vec::new();
    for result in per_seed {
        let (r, inst) = result?;
        runs.extend(r);
        instances.push(inst);
    }
    let summary = budgets
        .iter()
        .map(|&k| summarize(k, &runs.iter().filter(|r| r.k == k).collect::<Vec<_>>()))
        .collect();
    let report = ExperimentReport {
        runs,
        summary,
        instances,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(&report, dir, config.write_trace)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLine {
    pub seed: u64,
    pub k: usize,
    pub reward_id: usize,
    pub policy: DeterministicPolicy,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, lines: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for line in lines {
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `report.csv`, `summary.json`, `policies.jsonl`, one `mdp_seed<seed>.json`
/// per seed and, if requested, `fw_trace.jsonl`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path, with_trace: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("report.csv"), report.rows())?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    let policies = report.runs.iter().flat_map(|run| {
        run.policies.iter().enumerate().map(move |(reward_id, policy)| PolicyLine {
            seed: run.seed,
            k: run.k,
            reward_id,
            policy: policy.clone(),
        })
    });
    write_jsonl(&dir.join("policies.jsonl"), policies)?;
    for (seed, mdp, rewards) in &report.instances {
        save_mdp(&dir.join(format!("mdp_seed{seed}.json")), mdp, rewards)?;
    }
    if with_trace {
        write_jsonl(&dir.join("fw_trace.jsonl"), report.runs.iter().flat_map(|r| r.trace.iter()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub k: usize,
    pub reward_id: usize,
    pub v_star: f64,
    pub v_hat_policy: f64,
    pub gap: f64,
}

/// Re-scores the stored policies of an output directory against the stored
/// instances and writes `eval.csv` next to them.
pub fn evaluate_directory(dir: &Path) -> Result<Vec<EvalRow>> {
    let path = dir.join("policies.jsonl");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut instances: BTreeMap<u64, (TabularMdp, Vec<RewardFunction>)> = BTreeMap::new();
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PolicyLine = serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?;
        let (mdp, rewards) = match instances.entry(entry.seed) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(load_mdp(&dir.join(format!("mdp_seed{}.json", entry.seed)))?),
        };
        let (mdp, rewards) = (&*mdp, &*rewards);
        let reward = rewards.get(entry.reward_id).ok_or_else(|| {
            Error::Parse(format!("seed {} has no reward {}", entry.seed, entry.reward_id))
        })?;
        entry.policy.check_shape(mdp)?;
        let (v_star, v_hat_policy) = evaluate_policy(mdp, reward, &entry.policy)?;
        rows.push(EvalRow {
            seed: entry.seed,
            k: entry.k,
            reward_id: entry.reward_id,
            v_star,
            v_hat_policy,
            gap: v_star - v_hat_policy,
        });
    }
    write_csv(&dir.join("eval.csv"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let data = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&data, 0.5), 2.5);
        assert_eq!(quantile(&data, 0.0), 1.0);
        assert_eq!(quantile(&data, 1.0), 4.0);
        assert_eq!(quantile(&data, 0.25), 1.75);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
