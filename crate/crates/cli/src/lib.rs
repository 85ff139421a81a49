//! Experiment runner for robust pairwise conditional gradient methods.
//!
//! Each experiment reads a JSON config ([`config::Settings`]) and writes CSV
//! traces plus a JSON summary into an output directory.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;

use config::{ExperimentKind, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] robustcg_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dispatches to the experiment named in `settings`.
pub fn run_experiment(settings: &Settings, out_dir: &Path) -> Result<(), CliError> {
    match settings.experiment {
        ExperimentKind::LassoConvergence => experiments::cmd_lasso_convergence(settings, out_dir).map(drop),
        ExperimentKind::HaarConvergence => experiments::cmd_haar_convergence(settings, out_dir).map(drop),
        ExperimentKind::HeavyTailSweep => experiments::cmd_heavy_tail_sweep(settings, out_dir).map(drop),
        ExperimentKind::RascAudit => experiments::cmd_rasc_audit(settings, out_dir).map(drop),
    }
}
