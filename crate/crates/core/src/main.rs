use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reward_agnostic::harness::{evaluate_directory, generate_random_mdp, run_experiment, ExperimentConfig, GeneratorSpec};
use reward_agnostic::io::save_mdp;
use reward_agnostic::par::init_threads;
use reward_agnostic::{Result, SeedStream};

#[derive(Debug, Parser)]
#[command(version, about = "Reward-agnostic exploration experiments on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write 0 for wall times so reports are byte-reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// Generate a random MDP with uniform rewards.
    GenMdp {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        rewards: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate stored policies of a finished run.
    Eval {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
            no_timing,
        } => {
            if threads > 0 {
                init_threads(threads);
            }
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.master_seed = seed;
            }
            if out.is_some() {
                config.output_dir = out;
            }
            if no_timing {
                config.record_wall_time = false;
            }
            let report = run_experiment(&config)?;
            for s in &report.summary {
                println!(
                    "K={:<7} N={:<7} runs={:<3} median gap={:.5} [q1 {:.5}, q3 {:.5}] budget_ok={}",
                    s.k, s.n, s.runs, s.gap_median, s.gap_q1, s.gap_q3, s.budget_ok
                );
            }
            if let Some(dir) = &config.output_dir {
                println!("outputs written to {}", dir.display());
            }
        }
        Command::GenMdp {
            states,
            actions,
            horizon,
            concentration,
            seed,
            rewards,
            out,
        } => {
            let spec = GeneratorSpec {
                states,
                actions,
                horizon,
                concentration,
                seed: None,
            };
            let (mdp, rewards) = generate_random_mdp(&spec, rewards, SeedStream::new(seed))?;
            save_mdp(&out, &mdp, &rewards)?;
        }
        Command::Eval { dir } => {
            let rows = evaluate_directory(&dir)?;
            println!("seed,k,reward_id,v_star,v_hat_policy,gap");
            for r in rows {
                println!("{},{},{},{},{},{}", r.seed, r.k, r.reward_id, r.v_star, r.v_hat_policy, r.gap);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
