//! Scenario files and the command implementations behind the `sticky`
//! binary.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod commands;
pub mod scenario;

pub use commands::{check_trajectory, convergence_study, epsilon_sweep, output_dir, run_scenario, simulate, CliError};
pub use scenario::{Built, Overrides, Scenario, ScenarioError};
