//! Reward-agnostic exploration for tabular finite-horizon MDPs.
//!
//! The learner runs in three stages. Occupancy estimation builds an empirical
//! model of where each policy goes ([`estimation`]), steering exploration with
//! Frank-Wolfe designs ([`design`]). A full-horizon design then yields a
//! behavior mixture whose episodes form an offline dataset. Finally, for each
//! reward revealed afterwards, pessimistic value iteration plans on a trimmed
//! copy of that dataset ([`offline`]).
//!
//! [`mdp`] holds the ground-truth model and exact oracles; [`harness`] wires
//! the stages to a simulator and scores learned policies.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod io;
pub mod mdp;
pub mod offline;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
pub use mdp::{DeterministicPolicy, MixturePolicy, RewardFunction, TabularMdp, Trajectory, ValueTables};
pub use par::Execution;
pub use rng::SeedStream;
