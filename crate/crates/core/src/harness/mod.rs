//! End-to-end learner, simulated environment and experiment runner.

pub mod config;
pub mod generator;
pub mod pipeline;
pub mod report;
pub mod simulator;

pub use config::{Budgets, ExperimentConfig, MdpSource, RewardSource};
pub use generator::{generate_random_mdp, random_occupancy_model, GeneratorSpec};
pub use pipeline::{run_stage1_1, run_stage1_2, run_stage2, Stage11Output, Stage12Output, Stage2Config, Stage2Output};
pub use report::{evaluate_directory, run_experiment, run_single, BudgetSummary, ExperimentReport, ReportRow, RunRecord};
pub use simulator::Simulator;
