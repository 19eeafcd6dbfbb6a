//! Experiment configuration, the trial runner, and result summaries.

pub mod config;
pub mod runner;
pub mod summary;

pub use config::{ExperimentConfig, LsOptions, Method};
pub use runner::{replay, run_experiment, run_experiment_to, TrialRecord, CSV_HEADER};
pub use summary::{read_records, summarize, write_summary, SummaryRow, SUMMARY_HEADER};
