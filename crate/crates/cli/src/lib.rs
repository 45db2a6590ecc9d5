//! Scenario files, strategy runs, and the artifacts written by the `fiberpath` command.

pub mod output;
pub mod pareto;
pub mod runner;
pub mod scenario_file;

pub use runner::{plan_command, run_all, run_strategy, Outcome, PlanSummary};
pub use scenario_file::{ScenarioFile, Strategy};
