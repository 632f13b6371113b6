//! Experiment orchestration: configuration, seeded runs and sweeps,
//! aggregation across seeds, and the verification suite behind `owm check`.

pub mod aggregate;
pub mod check;
pub mod config;
pub mod experiment;
pub mod stats;

pub use aggregate::{aggregate, write_report, AggregateReport, VariantSummary};
pub use config::{EnvSpec, ExperimentConfig, SweepAxes, Variant};
pub use experiment::{run_experiment, Manifest, RunOptions};
