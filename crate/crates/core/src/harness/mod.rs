//! Experiment orchestration: configs, training runs, sweeps and reports.

pub mod config;
pub mod reference;
pub mod report;
pub mod run;
pub mod svg;
pub mod sweep;

pub use config::{Algorithm, ExperimentConfig};
pub use reference::{reference_scores, ReferenceScores};
pub use report::{emit_report, ReportOptions};
pub use run::{run_experiment, train_seed, Manifest, RunOutcome, SeedTrace};
pub use sweep::{run_sweep, SweepPoint, SweepSpec};
