use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use robustcg::config::{ExperimentKind, Settings};
use robustcg::run_experiment;

#[derive(Parser)]
#[command(name = "robustcg", version, about = "Run robust conditional gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robust PCG on a corrupted sparse regression, one trace per noise level.
    LassoConvergence(RunArgs),
    /// Robust PCG with median-of-means on heavy-tailed data vs. plain PCG on Gaussian data.
    HeavyTailSweep(RunArgs),
    /// Robust PCG on a signal sparse in the Haar wavelet basis.
    HaarConvergence(RunArgs),
    /// Audit robust atom selection against the exact population gradient.
    RascAudit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::LassoConvergence(a) => (ExperimentKind::LassoConvergence, a),
        Command::HeavyTailSweep(a) => (ExperimentKind::HeavyTailSweep, a),
        Command::HaarConvergence(a) => (ExperimentKind::HaarConvergence, a),
        Command::RascAudit(a) => (ExperimentKind::RascAudit, a),
    };
    let mut settings = Settings::from_path(&args.config)?;
    if settings.experiment != kind {
        bail!(
            "config key `experiment`: config is for {}, but the subcommand is {}",
            settings.experiment.name(),
            kind.name()
        );
    }
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    let out_dir = args
        .out_dir
        .or_else(|| settings.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run_experiment(&settings, &out_dir).with_context(|| format!("{} failed", kind.name()))?;
    Ok(())
}
