//! Experiment configuration: JSON parsing, per-experiment defaults and
//! validation.
//!
//! Every key is optional except `experiment` (and `sigma_x` for
//! `rasc-audit`). Errors name the offending key.

use std::path::{Path, PathBuf};

use robustcg_core::models::{Adversary, SigmaX};
use robustcg_core::robust_mean::{clamp_blocks, default_mom_blocks, RobustEstimator};
use robustcg_core::solvers::{Algorithm, StepSchedule};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LassoConvergence,
    HeavyTailSweep,
    HaarConvergence,
    RascAudit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LassoConvergence => "lasso-convergence",
            ExperimentKind::HeavyTailSweep => "heavy-tail-sweep",
            ExperimentKind::HaarConvergence => "haar-convergence",
            ExperimentKind::RascAudit => "rasc-audit",
        }
    }
}

/// Estimator as written in a config; missing hyper-parameters are filled
/// in per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    Mean,
    Mom {
        #[serde(default)]
        blocks: Option<usize>,
    },
    Trm {
        #[serde(default)]
        alpha: Option<f64>,
    },
}

impl EstimatorConfig {
    /// MOM defaults to `ceil(18 ln |A|)` blocks capped at `n / 4`; TrM
    /// defaults to trimming the contamination fraction.
    pub fn resolve(&self, n: usize, atom_count: usize, epsilon: f64) -> Result<RobustEstimator, CliError> {
        let est = match *self {
            EstimatorConfig::Mean => RobustEstimator::Mean,
            EstimatorConfig::Mom { blocks: Some(blocks) } => RobustEstimator::MedianOfMeans { blocks },
            EstimatorConfig::Mom { blocks: None } => RobustEstimator::MedianOfMeans {
                blocks: clamp_blocks(default_mom_blocks(atom_count)?, n),
            },
            EstimatorConfig::Trm { alpha } => RobustEstimator::TrimmedMean { trim_fraction: alpha.unwrap_or(epsilon) },
        };
        est.validate(n).map_err(|e| CliError::Config(format!("config key `estimator`: {e}")))?;
        Ok(est)
    }
}

/// Fully resolved settings of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub experiment: ExperimentKind,
    pub n: Vec<usize>,
    pub d: usize,
    pub sparsity: usize,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
    pub adversary: Adversary,
    pub estimator: EstimatorConfig,
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub max_iters: usize,
    pub reps: usize,
    pub seeds: Vec<u64>,
    pub seed: u64,
    pub sigma_x: Option<SigmaX>,
    /// Multiplier on the convex combination forming the true signal; 1.0
    /// places it on the boundary of the feasible ball.
    pub signal_scale: f64,
    pub out_dir: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "experiment",
    "n",
    "d",
    "sparsity",
    "sigma",
    "epsilon",
    "adversary",
    "estimator",
    "algorithm",
    "schedule",
    "max_iters",
    "reps",
    "seeds",
    "seed",
    "sigma_x",
    "signal_scale",
    "out_dir",
];

fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>, CliError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| CliError::Config(format!("config key `{key}`: {e}"))),
    }
}

/// A scalar or a list of scalars.
fn take_list<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<Vec<T>>, CliError> {
    match map.get(key) {
        Some(Value::Array(_)) => take::<Vec<T>>(map, key),
        _ => Ok(take::<T>(map, key)?.map(|v| vec![v])),
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("config key `{key}`: {msg}"))
}

impl Settings {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, CliError> {
        let Value::Object(mut map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        if let Some(key) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(bad(key, "unknown key"));
        }
        let experiment: ExperimentKind =
            take(&mut map, "experiment")?.ok_or_else(|| bad("experiment", "missing required key"))?;
        let mut s = Settings::defaults(experiment);

        let sweeps_n = experiment == ExperimentKind::HeavyTailSweep;
        let sweeps_sigma = matches!(experiment, ExperimentKind::LassoConvergence | ExperimentKind::HaarConvergence);
        if map.get("n").is_some_and(Value::is_array) && !sweeps_n {
            return Err(bad("n", format!("{} takes a single sample size", experiment.name())));
        }
        if map.get("sigma").is_some_and(Value::is_array) && !sweeps_sigma {
            return Err(bad("sigma", format!("{} takes a single noise level", experiment.name())));
        }

        if let Some(v) = take_list(&mut map, "n")? {
            s.n = v;
        }
        if let Some(v) = take(&mut map, "d")? {
            s.d = v;
        }
        if let Some(v) = take(&mut map, "sparsity")? {
            s.sparsity = v;
        }
        if let Some(v) = take_list(&mut map, "sigma")? {
            s.sigma = v;
        }
        if let Some(v) = take(&mut map, "epsilon")? {
            s.epsilon = v;
        }
        if let Some(v) = take(&mut map, "adversary")? {
            s.adversary = v;
        }
        if let Some(v) = take(&mut map, "estimator")? {
            s.estimator = v;
        }
        if let Some(v) = take(&mut map, "algorithm")? {
            s.algorithm = v;
        }
        if let Some(v) = take(&mut map, "schedule")? {
            s.schedule = v;
        }
        if let Some(v) = take(&mut map, "max_iters")? {
            s.max_iters = v;
        }
        if let Some(v) = take(&mut map, "reps")? {
            s.reps = v;
        }
        if let Some(v) = take(&mut map, "seeds")? {
            s.seeds = v;
        }
        if let Some(v) = take(&mut map, "seed")? {
            s.seed = v;
        }
        s.sigma_x = take(&mut map, "sigma_x")?;
        if let Some(v) = take(&mut map, "signal_scale")? {
            s.signal_scale = v;
        }
        s.out_dir = take(&mut map, "out_dir")?;
        s.validate()?;
        Ok(s)
    }

    pub fn defaults(experiment: ExperimentKind) -> Self {
        let mut s = Settings {
            experiment,
            n: vec![300],
            d: 500,
            sparsity: 20,
            sigma: vec![0.0, 0.001, 0.01, 0.1],
            epsilon: 0.1,
            adversary: Adversary::default(),
            estimator: EstimatorConfig::Trm { alpha: None },
            algorithm: Algorithm::Pcg,
            schedule: StepSchedule::FixedGeometric { eta0: 0.5, rho: 0.97 },
            max_iters: 500,
            reps: 1,
            seeds: Vec::new(),
            seed: 0,
            sigma_x: None,
            signal_scale: 1.0,
            out_dir: None,
        };
        match experiment {
            ExperimentKind::LassoConvergence => {}
            ExperimentKind::HaarConvergence => {
                s.d = 512;
                s.sparsity = 25;
                s.max_iters = 600;
            }
            ExperimentKind::HeavyTailSweep => {
                s.n = vec![200, 400, 800, 1600];
                s.d = 1000;
                s.sparsity = 10;
                s.sigma = vec![0.01];
                s.epsilon = 0.0;
                s.estimator = EstimatorConfig::Mom { blocks: None };
                s.max_iters = 400;
                s.reps = 30;
            }
            ExperimentKind::RascAudit => {
                s.sigma = vec![0.0];
            }
        }
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(bad("n", "sample sizes must be positive"));
        }
        if self.d == 0 {
            return Err(bad("d", "must be positive"));
        }
        if self.sparsity == 0 || self.sparsity > self.d {
            return Err(bad("sparsity", format!("must lie in [1, d = {}]", self.d)));
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(bad("sigma", "noise levels must be nonnegative and finite"));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(bad("epsilon", "must lie in [0, 0.5)"));
        }
        if self.max_iters == 0 {
            return Err(bad("max_iters", "must be at least 1"));
        }
        if self.reps == 0 {
            return Err(bad("reps", "must be at least 1"));
        }
        if !self.seeds.is_empty() && self.seeds.len() < self.reps {
            return Err(bad("seeds", format!("needs at least `reps` = {} entries", self.reps)));
        }
        if !(self.signal_scale > 0.0 && self.signal_scale <= 1.0) {
            return Err(bad("signal_scale", "must lie in (0, 1]"));
        }
        self.schedule.validate().map_err(|e| bad("schedule", e))?;
        match self.experiment {
            ExperimentKind::HaarConvergence => {
                if !self.d.is_power_of_two() || self.d < 2 {
                    return Err(bad("d", format!("Haar atoms need a power of two, got {}", self.d)));
                }
                if matches!(self.algorithm, Algorithm::Dicg | Algorithm::Dicg2) {
                    return Err(bad("algorithm", "DICG needs 0/1 vertices; use pcg or pcg2 with Haar atoms"));
                }
            }
            ExperimentKind::RascAudit => {
                let sigma_x = self.sigma_x.as_ref().ok_or_else(|| bad("sigma_x", "missing required key"))?;
                sigma_x.validate(self.d).map_err(|e| bad("sigma_x", e))?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seeds.get(rep).copied().unwrap_or_else(|| self.seed.wrapping_add(rep as u64))
    }
}
