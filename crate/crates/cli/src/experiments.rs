//! The four experiments behind the subcommands.

use std::path::Path;

use rayon::prelude::*;
use robustcg_core::atoms::AtomSet;
use robustcg_core::diagnostics::{
    fit_rasc, loglog_slope, pre_plateau_slope, rasc_records, rasc_threshold, restricted_min_eigenvalue, support,
    RascSummary,
};
use robustcg_core::models::{generate, CorruptionSpec, HeavyTailDistribution, ProblemSpec, RegressionProblem, SigmaX};
use robustcg_core::robust_mean::RobustEstimator;
use robustcg_core::solvers::{run, run_audited, Algorithm, LiftedL1, RunTrace, SolverConfig, StepSchedule};
use serde::Serialize;

use crate::config::{ExperimentKind, Settings};
use crate::output::{sigma_tag, write_json, write_signal_csv, write_trace_csv};
use crate::CliError;

/// Coordinates below this magnitude count as zero in support summaries.
pub const SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atoms {
    SignedBasis,
    Haar,
}

impl Atoms {
    pub fn build(self, d: usize) -> Result<AtomSet, CliError> {
        Ok(match self {
            Atoms::SignedBasis => AtomSet::signed_basis(d, 1.0)?,
            Atoms::Haar => AtomSet::haar_signed(d, 1.0)?,
        })
    }
}

/// Everything needed to draw one regression instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub atoms: Atoms,
    pub n: usize,
    pub d: usize,
    pub sparsity: usize,
    pub sigma: f64,
    pub corruption: CorruptionSpec,
    pub sigma_x: SigmaX,
    pub signal_scale: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn from_settings(settings: &Settings, atoms: Atoms, n: usize, sigma: f64, seed: u64) -> Self {
        InstanceSpec {
            atoms,
            n,
            d: settings.d,
            sparsity: settings.sparsity,
            sigma,
            corruption: huber(settings),
            sigma_x: settings.sigma_x.clone().unwrap_or(SigmaX::Identity),
            signal_scale: settings.signal_scale,
            seed,
        }
    }

    pub fn build(&self) -> Result<(AtomSet, RegressionProblem), CliError> {
        let set = self.atoms.build(self.d)?;
        let spec = ProblemSpec {
            n: self.n,
            sparsity: self.sparsity,
            sigma: self.sigma,
            corruption: self.corruption,
            sigma_x: self.sigma_x.clone(),
            signal_scale: self.signal_scale,
        };
        let problem = generate(&set, &spec, self.seed)?;
        Ok((set, problem))
    }
}

fn huber(settings: &Settings) -> CorruptionSpec {
    if settings.epsilon > 0.0 {
        CorruptionSpec::Huber { epsilon: settings.epsilon, adversary: settings.adversary }
    } else {
        CorruptionSpec::None
    }
}

/// Runs a solver on `problem` over the l1 ball spanned by `set`. DICG
/// variants run on the lifted simplex in twice the dimension.
pub fn solve(
    problem: &RegressionProblem,
    set: &AtomSet,
    config: &SolverConfig,
    audit: bool,
) -> Result<RunTrace, CliError> {
    let trace = match config.algorithm {
        Algorithm::Pcg | Algorithm::Pcg2 => {
            if audit {
                run_audited(problem, set, config, problem)?
            } else {
                run(problem, set, config)?
            }
        }
        Algorithm::Dicg | Algorithm::Dicg2 => {
            let radius = set
                .radius()
                .ok_or_else(|| CliError::Config("config key `algorithm`: DICG needs a signed basis".into()))?;
            let lifted = LiftedL1::new(problem, radius)?;
            let simplex = AtomSet::simplex_vertices(2 * problem.d())?;
            if audit {
                run_audited(&lifted, &simplex, config, &lifted)?
            } else {
                run(&lifted, &simplex, config)?
            }
        }
    };
    Ok(trace)
}

pub fn solver_config(
    settings: &Settings,
    estimator: RobustEstimator,
    algorithm: Algorithm,
    schedule: StepSchedule,
) -> SolverConfig {
    SolverConfig::new(algorithm, estimator, schedule, settings.max_iters)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub sigma: f64,
    pub final_xdist: f64,
    pub pre_plateau_slope: Option<f64>,
    /// Nonzero coordinates of the recovered signal.
    pub support_size: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub summary: ConvergenceSummary,
    pub trace: RunTrace,
    pub problem: RegressionProblem,
}

/// One convergence run at noise level `sigma`.
pub fn convergence_run(settings: &Settings, atoms: Atoms, sigma: f64) -> Result<ConvergenceRun, CliError> {
    let spec = InstanceSpec::from_settings(settings, atoms, settings.n[0], sigma, settings.seed);
    let (set, problem) = spec.build()?;
    let estimator = settings.estimator.resolve(problem.n(), set.len(), settings.epsilon)?;
    let config = solver_config(settings, estimator, settings.algorithm, settings.schedule);
    let trace = solve(&problem, &set, &config, false)?;
    let summary = ConvergenceSummary {
        sigma,
        final_xdist: trace.final_xdist().unwrap_or(f64::NAN),
        pre_plateau_slope: pre_plateau_slope(&trace.xdists()),
        support_size: support(&trace.final_signal, SUPPORT_TOL).len(),
    };
    Ok(ConvergenceRun { summary, trace, problem })
}

#[derive(Debug, Serialize)]
struct ConvergenceReport<'a> {
    experiment: &'static str,
    settings: &'a Settings,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    runs: Vec<ConvergenceSummary>,
}

fn convergence_command(
    settings: &Settings,
    out_dir: &Path,
    atoms: Atoms,
    stem: &str,
) -> Result<Vec<ConvergenceRun>, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let mut runs = Vec::with_capacity(settings.sigma.len());
    for &sigma in &settings.sigma {
        let r = convergence_run(settings, atoms, sigma)?;
        write_trace_csv(&out_dir.join(format!("{stem}_sigma_{}.csv", sigma_tag(sigma))), &r.trace, false)?;
        runs.push(r);
    }
    let note = (atoms == Atoms::Haar && settings.d == 512)
        .then(|| "signal dimension 512 stands in for 500, which is not a power of two".to_string());
    if atoms == Atoms::Haar {
        if let Some(first) = runs.first() {
            write_signal_csv(&out_dir.join(format!("{stem}_signal.csv")), &first.trace.final_signal)?;
        }
    }
    let report = ConvergenceReport {
        experiment: settings.experiment.name(),
        settings,
        note,
        runs: runs.iter().map(|r| r.summary.clone()).collect(),
    };
    write_json(&out_dir.join(format!("{stem}_summary.json")), &report)?;
    Ok(runs)
}

pub fn cmd_lasso_convergence(settings: &Settings, out_dir: &Path) -> Result<Vec<ConvergenceRun>, CliError> {
    expect_kind(settings, ExperimentKind::LassoConvergence)?;
    convergence_command(settings, out_dir, Atoms::SignedBasis, "lasso")
}

pub fn cmd_haar_convergence(settings: &Settings, out_dir: &Path) -> Result<Vec<ConvergenceRun>, CliError> {
    expect_kind(settings, ExperimentKind::HaarConvergence)?;
    convergence_command(settings, out_dir, Atoms::Haar, "haar")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSetting {
    RobustLognormal,
    MeanGaussian,
}

impl SweepSetting {
    pub fn name(self) -> &'static str {
        match self {
            SweepSetting::RobustLognormal => "robust_lognormal",
            SweepSetting::MeanGaussian => "mean_gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub rep: usize,
    pub setting: SweepSetting,
    pub final_xdist: f64,
    pub pcg_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub robust_lognormal: f64,
    pub mean_gaussian: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub per_n: Vec<SweepPoint>,
    pub loglog_slope: Option<f64>,
}

/// One repetition of one setting of the heavy-tail sweep.
pub fn sweep_job(settings: &Settings, n: usize, rep: usize, setting: SweepSetting) -> Result<SweepRow, CliError> {
    let mut spec = InstanceSpec::from_settings(settings, Atoms::SignedBasis, n, settings.sigma[0], settings.rep_seed(rep));
    let (set, estimator) = match setting {
        SweepSetting::RobustLognormal => {
            spec.corruption = CorruptionSpec::HeavyTail { distribution: HeavyTailDistribution::LogNormalCentered };
            let set = spec.atoms.build(spec.d)?;
            let est = settings.estimator.resolve(n, set.len(), 0.0)?;
            (set, est)
        }
        SweepSetting::MeanGaussian => {
            spec.corruption = CorruptionSpec::None;
            (spec.atoms.build(spec.d)?, RobustEstimator::Mean)
        }
    };
    let (_, problem) = spec.build()?;
    let config = solver_config(settings, estimator, settings.algorithm, settings.schedule);
    let trace = solve(&problem, &set, &config, false)?;
    let feasible = match settings.algorithm {
        Algorithm::Pcg | Algorithm::Pcg2 => trace.feasibility.pcg_ok(),
        Algorithm::Dicg | Algorithm::Dicg2 => trace.feasibility.dicg_ok(),
    };
    Ok(SweepRow { n, rep, setting, final_xdist: trace.final_xdist().unwrap_or(f64::NAN), pcg_feasible: feasible })
}

/// Worker count from `ROBUSTCG_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("ROBUSTCG_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(CliError::Config(format!("ROBUSTCG_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every (n, rep, setting) job on a worker pool; rows come back in
/// that order regardless of scheduling.
pub fn heavy_tail_rows(settings: &Settings) -> Result<Vec<SweepRow>, CliError> {
    let jobs: Vec<(usize, usize, SweepSetting)> = settings
        .n
        .iter()
        .flat_map(|&n| {
            (0..settings.reps)
                .flat_map(move |rep| [SweepSetting::RobustLognormal, SweepSetting::MeanGaussian].map(|s| (n, rep, s)))
        })
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_cap()? {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|&(n, rep, s)| sweep_job(settings, n, rep, s)).collect())
}

pub fn summarize_sweep(settings: &Settings, rows: &[SweepRow]) -> SweepSummary {
    let mean_of = |n: usize, s: SweepSetting| {
        let v: Vec<f64> = rows.iter().filter(|r| r.n == n && r.setting == s).map(|r| r.final_xdist).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let per_n: Vec<SweepPoint> = settings
        .n
        .iter()
        .map(|&n| {
            let robust = mean_of(n, SweepSetting::RobustLognormal);
            let gaussian = mean_of(n, SweepSetting::MeanGaussian);
            SweepPoint { n, robust_lognormal: robust, mean_gaussian: gaussian, ratio: robust / gaussian }
        })
        .collect();
    let xs: Vec<f64> = per_n.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = per_n.iter().map(|p| p.robust_lognormal).collect();
    SweepSummary { per_n, loglog_slope: loglog_slope(&xs, &ys).ok() }
}

#[derive(Debug, Serialize)]
struct SweepReport<'a> {
    experiment: &'static str,
    settings: &'a Settings,
    #[serde(flatten)]
    summary: &'a SweepSummary,
}

pub fn cmd_heavy_tail_sweep(settings: &Settings, out_dir: &Path) -> Result<(Vec<SweepRow>, SweepSummary), CliError> {
    expect_kind(settings, ExperimentKind::HeavyTailSweep)?;
    std::fs::create_dir_all(out_dir)?;
    let rows = heavy_tail_rows(settings)?;
    let summary = summarize_sweep(settings, &rows);
    let mut csv = String::from("n,rep,setting,final_xdist\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.n, r.rep, r.setting.name(), crate::output::fmt_f64(r.final_xdist)));
    }
    std::fs::write(out_dir.join("heavy_tail.csv"), csv)?;
    let report = SweepReport { experiment: settings.experiment.name(), settings, summary: &summary };
    write_json(&out_dir.join("heavy_tail_summary.json"), &report)?;
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub theta_hat: f64,
    pub psi_hat: f64,
    pub coverage: f64,
    pub threshold: f64,
    pub pass: bool,
    pub alpha_l: f64,
    pub card: usize,
    pub final_xdist: f64,
}

#[derive(Debug, Clone)]
pub struct AuditRun {
    pub report: AuditReport,
    pub trace: RunTrace,
}

/// Audited run on the lasso instance. `alpha_l` is the smallest eigenvalue
/// of the clean-row design covariance restricted to the support of the
/// true signal.
pub fn audit_run(settings: &Settings) -> Result<AuditRun, CliError> {
    let spec = InstanceSpec::from_settings(settings, Atoms::SignedBasis, settings.n[0], settings.sigma[0], settings.seed);
    let (set, problem) = spec.build()?;
    let estimator = settings.estimator.resolve(problem.n(), set.len(), settings.epsilon)?;
    let config = solver_config(settings, estimator, settings.algorithm, settings.schedule);
    let trace = solve(&problem, &set, &config, true)?;
    let fit = fit_rasc(&rasc_records(&trace))?;
    let supp = support(&problem.beta_star, 0.0);
    let alpha_l = restricted_min_eigenvalue(&problem.clean_covariance(), &supp)?;
    let threshold = rasc_threshold(alpha_l, settings.sparsity);
    let summary = RascSummary::new(fit, threshold);
    let report = AuditReport {
        theta_hat: summary.theta_hat,
        psi_hat: summary.psi_hat,
        coverage: summary.coverage,
        threshold,
        pass: summary.pass,
        alpha_l,
        card: settings.sparsity,
        final_xdist: trace.final_xdist().unwrap_or(f64::NAN),
    };
    Ok(AuditRun { report, trace })
}

pub fn cmd_rasc_audit(settings: &Settings, out_dir: &Path) -> Result<AuditRun, CliError> {
    expect_kind(settings, ExperimentKind::RascAudit)?;
    std::fs::create_dir_all(out_dir)?;
    let run = audit_run(settings)?;
    write_trace_csv(&out_dir.join("rasc_audit.csv"), &run.trace, true)?;
    write_json(&out_dir.join("rasc_audit_summary.json"), &run.report)?;
    Ok(run)
}

fn expect_kind(settings: &Settings, kind: ExperimentKind) -> Result<(), CliError> {
    if settings.experiment == kind {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "config key `experiment`: expected {}, got {}",
            kind.name(),
            settings.experiment.name()
        )))
    }
}
