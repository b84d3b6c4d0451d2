//! Experiment harness: preset suites, seeded parallel trials, CSV and JSON outputs.

pub mod config;
pub mod run;
pub mod selftest;
pub mod svg;

pub use config::{ExperimentConfig, Method, Setting, Suite, TruthKind};
pub use run::{run_experiment, run_trial, run_trials, summarize, RunReport, SettingContext, SummaryRow, TrialRecord};
pub use selftest::{selftest, SelftestReport};
