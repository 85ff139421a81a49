//! Pairwise conditional gradient solvers.
//!
//! Four drivers share one loop:
//!
//! - PCG keeps an explicit convex decomposition and moves mass from the away
//!   atom to the FW atom.
//! - DICG works on polytopes with 0/1 vertices, keeps no decomposition, and
//!   rounds steps down to powers of two.
//! - PCG2 / DICG2 select atoms exactly on a coordinate-wise robust gradient
//!   instead of scoring atoms robustly.
//!
//! With `RobustEstimator::Mean` and the empirical gradient every driver
//! reduces to its classical, non-robust counterpart.

use serde::{Deserialize, Serialize};

use crate::atoms::{
    away_exact, dicg_away_exact, dicg_away_mask, dicg_step_size, lmo_exact, AtomSet, Decomposition,
};
use crate::diagnostics::{rasc_gap, PopulationOracle};
use crate::rlmo::{rlmo_away, rlmo_fw, robust_duality_gap, GradientBatch};
use crate::robust_mean::RobustEstimator;
use crate::{check_dim, dot, l2_distance, Error, Result};

/// Source of per-sample gradients at an iterate of the solver space.
pub trait GradientOracle {
    /// Dimension of the solver space.
    fn dim(&self) -> usize;

    fn gradient_batch(&self, iterate: &[f64]) -> Result<GradientBatch>;

    /// Maps a solver iterate to the signal it represents.
    fn signal(&self, iterate: &[f64]) -> Vec<f64> {
        iterate.to_vec()
    }

    /// Ground-truth signal, when known.
    fn reference(&self) -> Option<&[f64]> {
        None
    }
}

impl<P: GradientOracle + ?Sized> GradientOracle for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn gradient_batch(&self, iterate: &[f64]) -> Result<GradientBatch> {
        (**self).gradient_batch(iterate)
    }

    fn signal(&self, iterate: &[f64]) -> Vec<f64> {
        (**self).signal(iterate)
    }

    fn reference(&self) -> Option<&[f64]> {
        (**self).reference()
    }
}

/// An l1 ball of radius `D` in `R^d` represented as the simplex in `R^{2d}`:
/// `beta = D (z[..d] - z[d..])`.
#[derive(Debug, Clone)]
pub struct LiftedL1<P> {
    pub inner: P,
    pub radius: f64,
}

impl<P: GradientOracle> LiftedL1<P> {
    pub fn new(inner: P, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param(format!("radius must be positive, got {radius}")));
        }
        Ok(LiftedL1 { inner, radius })
    }

    pub fn fold(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len() / 2;
        (0..d).map(|j| self.radius * (z[j] - z[j + d])).collect()
    }

    fn lift(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .map(|v| self.radius * v)
            .chain(g.iter().map(|v| -self.radius * v))
            .collect()
    }
}

impl<P: GradientOracle> GradientOracle for LiftedL1<P> {
    fn dim(&self) -> usize {
        2 * self.inner.dim()
    }

    fn gradient_batch(&self, iterate: &[f64]) -> Result<GradientBatch> {
        check_dim(self.dim(), iterate.len())?;
        let inner = self.inner.gradient_batch(&self.fold(iterate))?;
        let (n, d) = (inner.n(), inner.dim());
        let mut coords = Vec::with_capacity(2 * n * d);
        for j in 0..d {
            coords.extend(inner.coordinate(j).iter().map(|v| self.radius * v));
        }
        for j in 0..d {
            coords.extend(inner.coordinate(j).iter().map(|v| -self.radius * v));
        }
        GradientBatch::from_coordinate_major(n, 2 * d, coords)
    }

    fn signal(&self, iterate: &[f64]) -> Vec<f64> {
        self.inner.signal(&self.fold(iterate))
    }

    fn reference(&self) -> Option<&[f64]> {
        self.inner.reference()
    }
}

impl<P: GradientOracle + PopulationOracle> PopulationOracle for LiftedL1<P> {
    fn population_gradient(&self, iterate: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), iterate.len())?;
        Ok(self.lift(&self.inner.population_gradient(&self.fold(iterate))?))
    }
}

/// Which coefficient multiplies `rho^t sqrt(h0)` in the theoretical DICG
/// schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DicgCoefficient {
    /// `sqrt(alpha_l) / (sqrt(32 card) alpha_u D^2)`.
    #[default]
    Proof,
    /// `R / sqrt(alpha_l)`.
    Headline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    TheoreticalDicg {
        alpha_l: f64,
        alpha_u: f64,
        diameter: f64,
        card: usize,
        h0: f64,
        psi: f64,
        #[serde(default)]
        coefficient: DicgCoefficient,
    },
    TheoreticalPcg {
        curvature: f64,
        mu: f64,
        h0: f64,
        psi: f64,
    },
    AdaptiveGap {
        c: f64,
    },
    FixedGeometric {
        eta0: f64,
        rho: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

/// `sqrt(2) / sqrt(2 - kappa) - 2 kappa / (2 - kappa)` for `kappa` in `[0, 1]`.
pub fn rate_factor_pcg(kappa: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::param(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    Ok(std::f64::consts::SQRT_2 / (2.0 - kappa).sqrt() - 2.0 * kappa / (2.0 - kappa))
}

/// `kappa / (32 card D^2)` with `kappa = alpha_l / alpha_u`.
pub fn dicg_r(alpha_l: f64, alpha_u: f64, diameter: f64, card: usize) -> Result<f64> {
    positive("alpha_l", alpha_l)?;
    positive("alpha_u", alpha_u)?;
    positive("diameter", diameter)?;
    if alpha_l > alpha_u {
        return Err(Error::param(format!("alpha_l ({alpha_l}) exceeds alpha_u ({alpha_u})")));
    }
    if card == 0 {
        return Err(Error::param("card must be at least 1"));
    }
    let r = alpha_l / alpha_u / (32.0 * card as f64 * diameter * diameter);
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::param(format!("derived R = {r} is outside (0, 1)")));
    }
    Ok(r)
}

pub fn rate_factor_dicg(alpha_l: f64, alpha_u: f64, diameter: f64, card: usize) -> Result<f64> {
    rate_factor_pcg(dicg_r(alpha_l, alpha_u, diameter, card)?)
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::TheoreticalDicg { alpha_l, alpha_u, diameter, card, h0, psi, .. } => {
                nonnegative("h0", h0)?;
                nonnegative("psi", psi)?;
                let rho = rate_factor_dicg(alpha_l, alpha_u, diameter, card)?;
                if !(rho > 0.0 && rho < 1.0) {
                    return Err(Error::param(format!("rate factor {rho} is outside (0, 1)")));
                }
                Ok(())
            }
            StepSchedule::TheoreticalPcg { curvature, mu, h0, psi } => {
                positive("curvature", curvature)?;
                positive("mu", mu)?;
                nonnegative("h0", h0)?;
                nonnegative("psi", psi)?;
                if mu > curvature {
                    return Err(Error::param(format!("mu ({mu}) exceeds curvature ({curvature})")));
                }
                Ok(())
            }
            StepSchedule::AdaptiveGap { c } => positive("c", c),
            StepSchedule::FixedGeometric { eta0, rho } => {
                nonnegative("eta0", eta0)?;
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(Error::param(format!("rho must lie in (0, 1], got {rho}")));
                }
                Ok(())
            }
        }
    }

    /// Step size at iteration `t` given the clamped gap estimate, before
    /// clamping to `[0, 1]`.
    pub fn raw_step(&self, t: usize, gap: f64) -> f64 {
        let t = t as i32;
        match *self {
            StepSchedule::TheoreticalDicg { alpha_l, alpha_u, diameter, card, h0, psi, coefficient } => {
                let card_f = card as f64;
                let d2 = diameter * diameter;
                let r = alpha_l / alpha_u / (32.0 * card_f * d2);
                let rho = rate_factor_pcg(r).unwrap_or(1.0);
                let z = match coefficient {
                    DicgCoefficient::Proof => alpha_l.sqrt() / ((32.0 * card_f).sqrt() * alpha_u * d2),
                    DicgCoefficient::Headline => r / alpha_l.sqrt(),
                };
                let floor = alpha_l * psi / (16.0 * alpha_u * alpha_u * d2 * d2 * card_f);
                rho.powi(t) * z * h0.sqrt() + floor
            }
            StepSchedule::TheoreticalPcg { curvature, mu, h0, psi } => {
                let kappa = mu / curvature;
                let rho = rate_factor_pcg(kappa).unwrap_or(1.0);
                rho.powi(t) * (kappa / curvature).sqrt() * h0.sqrt() + 4.0 * kappa / curvature * psi
            }
            StepSchedule::AdaptiveGap { c } => c * gap.max(0.0),
            StepSchedule::FixedGeometric { eta0, rho } => eta0 * rho.powi(t),
        }
    }

    /// Step size clamped to `[0, 1]`.
    pub fn step(&self, t: usize, gap: f64) -> f64 {
        let eta = self.raw_step(t, gap);
        if eta.is_nan() {
            0.0
        } else {
            eta.clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pcg,
    Dicg,
    Pcg2,
    Dicg2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub estimator: RobustEstimator,
    pub schedule: StepSchedule,
    pub max_iters: usize,
    #[serde(default)]
    pub stop_xgap: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Keep a signal snapshot for every record.
    #[serde(default)]
    pub record_iterates: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, estimator: RobustEstimator, schedule: StepSchedule, max_iters: usize) -> Self {
        SolverConfig { algorithm, estimator, schedule, max_iters, stop_xgap: None, seed: 0, record_iterates: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if let Some(s) = self.stop_xgap {
            nonnegative("stop_xgap", s)?;
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub xdist: Option<f64>,
    /// Robust duality gap estimate, clamped at 0.
    pub gap: f64,
    /// Step actually taken after trimming or dyadic rounding.
    pub eta: f64,
    pub fw_index: usize,
    pub away_index: usize,
    pub rasc_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<Vec<f64>>,
}

/// Worst feasibility violations seen over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityLog {
    /// PCG: largest `|sum c_i - 1|`.
    pub max_weight_sum_error: f64,
    /// PCG: smallest decomposition coefficient.
    pub min_weight: f64,
    /// DICG: smallest iterate coordinate.
    pub min_coordinate: f64,
    /// DICG: largest `|sum z_i - 1|`.
    pub max_simplex_error: f64,
}

impl Default for FeasibilityLog {
    fn default() -> Self {
        FeasibilityLog {
            max_weight_sum_error: 0.0,
            min_weight: f64::INFINITY,
            min_coordinate: f64::INFINITY,
            max_simplex_error: 0.0,
        }
    }
}

impl FeasibilityLog {
    fn observe_decomposition(&mut self, dec: &Decomposition) {
        self.max_weight_sum_error = self.max_weight_sum_error.max((dec.weight_sum() - 1.0).abs());
        self.min_weight = self.min_weight.min(dec.min_weight());
    }

    fn observe_iterate(&mut self, z: &[f64]) {
        let min = z.iter().copied().fold(f64::INFINITY, f64::min);
        self.min_coordinate = self.min_coordinate.min(min);
        self.max_simplex_error = self.max_simplex_error.max((z.iter().sum::<f64>() - 1.0).abs());
    }

    /// PCG invariants: weights sum to 1 within `1e-10` and stay positive.
    pub fn pcg_ok(&self) -> bool {
        self.max_weight_sum_error <= 1e-10 && self.min_weight > 0.0
    }

    /// DICG invariants on a simplex: `z >= -1e-12`, `sum z = 1` within `1e-8`.
    pub fn dicg_ok(&self) -> bool {
        self.min_coordinate >= -1e-12 && self.max_simplex_error <= 1e-8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub records: Vec<IterRecord>,
    /// Final iterate in solver coordinates.
    pub final_iterate: Vec<f64>,
    pub final_signal: Vec<f64>,
    pub feasibility: FeasibilityLog,
}

impl RunTrace {
    pub fn final_xdist(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.xdist)
    }

    pub fn xdists(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.xdist).collect()
    }
}

/// Component `j` is the robust estimate over `g_1(j), ..., g_n(j)`.
pub fn coordinatewise_robust_gradient(batch: &GradientBatch, estimator: RobustEstimator) -> Result<Vec<f64>> {
    estimator.validate(batch.n())?;
    let mut buf = vec![0.0; batch.n()];
    (0..batch.dim())
        .map(|j| {
            buf.copy_from_slice(batch.coordinate(j));
            estimator.estimate_mut(&mut buf)
        })
        .collect()
}

pub fn run<P: GradientOracle + ?Sized>(problem: &P, set: &AtomSet, config: &SolverConfig) -> Result<RunTrace> {
    drive(problem, set, config, None)
}

/// Like [`run`], and additionally records the RASC gap against the exact
/// population gradient at every iteration.
pub fn run_audited<P: GradientOracle + ?Sized>(
    problem: &P,
    set: &AtomSet,
    config: &SolverConfig,
    population: &dyn PopulationOracle,
) -> Result<RunTrace> {
    drive(problem, set, config, Some(population))
}

fn with_algorithm(config: &SolverConfig, algorithm: Algorithm) -> SolverConfig {
    SolverConfig { algorithm, ..config.clone() }
}

pub fn run_pcg<P: GradientOracle + ?Sized>(problem: &P, set: &AtomSet, config: &SolverConfig) -> Result<RunTrace> {
    run(problem, set, &with_algorithm(config, Algorithm::Pcg))
}

pub fn run_dicg<P: GradientOracle + ?Sized>(problem: &P, set: &AtomSet, config: &SolverConfig) -> Result<RunTrace> {
    run(problem, set, &with_algorithm(config, Algorithm::Dicg))
}

pub fn run_pcg2<P: GradientOracle + ?Sized>(problem: &P, set: &AtomSet, config: &SolverConfig) -> Result<RunTrace> {
    run(problem, set, &with_algorithm(config, Algorithm::Pcg2))
}

pub fn run_dicg2<P: GradientOracle + ?Sized>(problem: &P, set: &AtomSet, config: &SolverConfig) -> Result<RunTrace> {
    run(problem, set, &with_algorithm(config, Algorithm::Dicg2))
}

enum State {
    Pcg { dec: Decomposition, iterate: Vec<f64> },
    Dicg { z: Vec<f64> },
}

impl State {
    fn iterate(&self) -> &[f64] {
        match self {
            State::Pcg { iterate, .. } => iterate,
            State::Dicg { z } => z,
        }
    }
}

fn drive<P: GradientOracle + ?Sized>(
    problem: &P,
    set: &AtomSet,
    config: &SolverConfig,
    population: Option<&dyn PopulationOracle>,
) -> Result<RunTrace> {
    config.validate()?;
    check_dim(set.dim(), problem.dim())?;
    let decomposed = matches!(config.algorithm, Algorithm::Pcg | Algorithm::Pcg2);
    let robust_selection = matches!(config.algorithm, Algorithm::Pcg | Algorithm::Dicg);
    if !decomposed && !set.is_hypercube() {
        return Err(Error::Config("DICG requires an atomic set with 0/1 vertices".into()));
    }

    let mut state = if decomposed {
        State::Pcg { dec: Decomposition::vertex(0), iterate: set.atom(0)? }
    } else {
        State::Dicg { z: set.atom(0)? }
    };
    let mut feasibility = FeasibilityLog::default();
    let mut records = Vec::with_capacity(config.max_iters + 1);
    let reference = problem.reference();

    for t in 0..=config.max_iters {
        match &state {
            State::Pcg { dec, .. } => feasibility.observe_decomposition(dec),
            State::Dicg { z } => feasibility.observe_iterate(z),
        }
        let x = state.iterate().to_vec();
        let batch = problem.gradient_batch(&x)?;
        check_dim(set.dim(), batch.dim())?;

        let candidates = match &state {
            State::Pcg { dec, .. } => dec.active(),
            State::Dicg { z } => set.support_restricted(z),
        };
        if candidates.is_empty() {
            return Err(Error::EmptyActiveSet);
        }

        let (fw, away, gap) = if robust_selection {
            let (fw, _) = rlmo_fw(&batch, set, config.estimator)?;
            let (away, _) = rlmo_away(&batch, set, &candidates, config.estimator)?;
            let gap = robust_duality_gap(&batch, &x, &set.atom(fw)?, config.estimator)?;
            (fw, away, gap)
        } else {
            let g = coordinatewise_robust_gradient(&batch, config.estimator)?;
            let (fw, _) = lmo_exact(set, &g)?;
            let (away, _) = if decomposed {
                away_exact(set, &candidates, &g)?
            } else {
                dicg_away_exact(set, &dicg_away_mask(&g, &x)?)?
            };
            let v = set.atom(fw)?;
            let w: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - b).collect();
            (fw, away, dot(&g, &w))
        };
        let gap = if gap.is_nan() { 0.0 } else { gap.max(0.0) };

        let rasc = match population {
            Some(pop) => Some(audit_gap(pop, set, &x, &candidates, decomposed, fw, away)?),
            None => None,
        };

        let signal = problem.signal(&x);
        let xdist = reference.map(|r| l2_distance(&signal, r));
        let stop = t == config.max_iters || config.stop_xgap.is_some_and(|s| gap <= s);

        let eta = if stop { 0.0 } else { config.schedule.step(t, gap) };
        let taken = if eta > 0.0 { take_step(&mut state, set, fw, away, eta)? } else { 0.0 };

        records.push(IterRecord {
            iter: t,
            xdist,
            gap,
            eta: taken,
            fw_index: fw,
            away_index: away,
            rasc_gap: rasc,
            signal: config.record_iterates.then_some(signal),
        });
        if stop {
            break;
        }
    }

    let final_iterate = state.iterate().to_vec();
    let final_signal = problem.signal(&final_iterate);
    Ok(RunTrace { algorithm: config.algorithm, records, final_iterate, final_signal, feasibility })
}

fn take_step(state: &mut State, set: &AtomSet, fw: usize, away: usize, eta: f64) -> Result<f64> {
    match state {
        State::Pcg { dec, iterate } => {
            let moved = dec.pairwise_update(fw, away, eta)?;
            *iterate = dec.reconstruct(set);
            Ok(moved)
        }
        State::Dicg { z } => {
            let mut direction = vec![0.0; z.len()];
            set.add_scaled(fw, 1.0, &mut direction);
            set.add_scaled(away, -1.0, &mut direction);
            let step = dicg_step_size(eta, z, &direction)?;
            for (zi, di) in z.iter_mut().zip(&direction) {
                *zi += step * di;
            }
            Ok(step)
        }
    }
}

fn audit_gap(
    pop: &dyn PopulationOracle,
    set: &AtomSet,
    x: &[f64],
    candidates: &[usize],
    decomposed: bool,
    fw: usize,
    away: usize,
) -> Result<f64> {
    let g = pop.population_gradient(x)?;
    let (exact_fw, _) = lmo_exact(set, &g)?;
    let (exact_away, _) = if decomposed {
        away_exact(set, candidates, &g)?
    } else {
        dicg_away_exact(set, &dicg_away_mask(&g, x)?)?
    };
    let mut exact_dir = set.atom(exact_fw)?;
    set.add_scaled(exact_away, -1.0, &mut exact_dir);
    let mut robust_dir = set.atom(fw)?;
    set.add_scaled(away, -1.0, &mut robust_dir);
    rasc_gap(&g, &exact_dir, &robust_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `F = 0.5 |beta - target|^2` with the exact gradient as a single sample.
    struct Quadratic {
        target: Vec<f64>,
    }

    impl GradientOracle for Quadratic {
        fn dim(&self) -> usize {
            self.target.len()
        }

        fn gradient_batch(&self, iterate: &[f64]) -> Result<GradientBatch> {
            let g: Vec<f64> = iterate.iter().zip(&self.target).map(|(x, t)| x - t).collect();
            GradientBatch::from_samples(&[g])
        }

        fn reference(&self) -> Option<&[f64]> {
            Some(&self.target)
        }
    }

    impl PopulationOracle for Quadratic {
        fn population_gradient(&self, iterate: &[f64]) -> Result<Vec<f64>> {
            Ok(iterate.iter().zip(&self.target).map(|(x, t)| x - t).collect())
        }
    }

    fn adaptive(algorithm: Algorithm, iters: usize) -> SolverConfig {
        SolverConfig::new(algorithm, RobustEstimator::Mean, StepSchedule::AdaptiveGap { c: 0.5 }, iters)
    }

    #[test]
    fn rate_factor_examples() {
        assert_eq!(rate_factor_pcg(0.0).unwrap(), 1.0);
        assert!((rate_factor_pcg(1.0).unwrap() - (2f64.sqrt() - 2.0)).abs() < 1e-15);
        assert!((rate_factor_pcg(0.5).unwrap() - 0.48803).abs() < 1e-4);
        assert!(rate_factor_pcg(1.5).is_err());
        assert!(rate_factor_pcg(-0.1).is_err());
    }

    #[test]
    fn rate_factor_stays_below_one() {
        for k in 0..=1000 {
            let kappa = k as f64 / 1000.0;
            let rho = rate_factor_pcg(kappa).unwrap();
            assert!(rho <= 1.0 + 1e-12);
            if k >= 1 {
                assert!(rho < 1.0);
            }
        }
    }

    #[test]
    fn dicg_rate_factor_uses_r() {
        let rho = rate_factor_dicg(0.5, 1.0, 2.0, 3).unwrap();
        let r = 0.5 / (32.0 * 3.0 * 4.0);
        assert_eq!(rho, rate_factor_pcg(r).unwrap());
        assert!(rho > 0.0 && rho < 1.0);
        assert!(rate_factor_dicg(2.0, 1.0, 1.0, 1).is_err());
        assert!(rate_factor_dicg(0.5, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::FixedGeometric { eta0: 0.5, rho: 0.5 };
        assert_eq!(s.step(0, 0.0), 0.5);
        assert_eq!(s.step(2, 0.0), 0.125);
        let s = StepSchedule::AdaptiveGap { c: 0.1 };
        assert_eq!(s.step(7, 2.0), 0.2);
        assert_eq!(s.step(7, -2.0), 0.0);
        assert_eq!(s.step(7, 50.0), 1.0);
        assert!(StepSchedule::AdaptiveGap { c: 0.0 }.validate().is_err());
        assert!(StepSchedule::FixedGeometric { eta0: 0.5, rho: 1.5 }.validate().is_err());

        let s = StepSchedule::TheoreticalPcg { curvature: 2.0, mu: 1.0, h0: 4.0, psi: 0.25 };
        s.validate().unwrap();
        let rho = rate_factor_pcg(0.5).unwrap();
        let expected = rho * 0.5 * 2.0 + 4.0 * 0.25 * 0.25;
        assert!((s.raw_step(1, 0.0) - expected).abs() < 1e-15);
        assert!(StepSchedule::TheoreticalPcg { curvature: 1.0, mu: 2.0, h0: 1.0, psi: 0.0 }.validate().is_err());

        let proof = StepSchedule::TheoreticalDicg {
            alpha_l: 0.5,
            alpha_u: 1.0,
            diameter: 1.0,
            card: 2,
            h0: 1.0,
            psi: 0.0,
            coefficient: DicgCoefficient::Proof,
        };
        proof.validate().unwrap();
        assert!((proof.raw_step(0, 0.0) - 0.5f64.sqrt() / 8.0).abs() < 1e-15);
        let headline = StepSchedule::TheoreticalDicg {
            alpha_l: 0.5,
            alpha_u: 1.0,
            diameter: 1.0,
            card: 2,
            h0: 1.0,
            psi: 0.0,
            coefficient: DicgCoefficient::Headline,
        };
        assert!((headline.raw_step(0, 0.0) - (0.5 / 64.0) / 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pcg_converges_on_simplex_quadratic() {
        let q = Quadratic { target: vec![0.6, 0.4, 0.0] };
        let set = AtomSet::simplex_vertices(3).unwrap();
        for alg in [Algorithm::Pcg, Algorithm::Dicg, Algorithm::Pcg2, Algorithm::Dicg2] {
            let trace = run(&q, &set, &adaptive(alg, 200)).unwrap();
            let x = trace.final_xdist().unwrap();
            assert!(x <= 1e-6, "{alg:?} reached {x}");
        }
    }

    #[test]
    fn clean_quadratic_makes_progress_in_windows() {
        let q = Quadratic { target: vec![0.5, 0.3, 0.2, 0.0] };
        let set = AtomSet::simplex_vertices(4).unwrap();
        let trace = run(&q, &set, &adaptive(Algorithm::Pcg, 600)).unwrap();
        let xs = trace.xdists();
        for t in 0..xs.len() - 50 {
            if xs[t] < 1e-8 {
                break;
            }
            assert!(xs[t + 50] < xs[t], "no progress between {t} and {}", t + 50);
        }
    }

    #[test]
    fn optimum_at_start_idles() {
        let q = Quadratic { target: vec![1.0, 0.0, 0.0] };
        let set = AtomSet::simplex_vertices(3).unwrap();
        for alg in [Algorithm::Pcg, Algorithm::Dicg] {
            let trace = run(&q, &set, &adaptive(alg, 10)).unwrap();
            assert_eq!(trace.records[0].xdist, Some(0.0));
            assert!(trace.records.iter().all(|r| r.eta == 0.0));
            assert_eq!(trace.final_iterate, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn trace_shape() {
        let q = Quadratic { target: vec![0.2, 0.8] };
        let set = AtomSet::simplex_vertices(2).unwrap();
        let trace = run(&q, &set, &adaptive(Algorithm::Pcg, 5)).unwrap();
        assert_eq!(trace.records.len(), 6);
        assert!(trace.records.windows(2).all(|w| w[1].iter == w[0].iter + 1));
        assert_eq!(trace.records.last().unwrap().eta, 0.0);

        let mut cfg = adaptive(Algorithm::Pcg, 1000);
        cfg.stop_xgap = Some(1e-6);
        let trace = run(&q, &set, &cfg).unwrap();
        assert!(trace.records.len() < 1001);
        assert!(trace.records.last().unwrap().gap <= 1e-6);
    }

    #[test]
    fn dicg_rejects_signed_sets() {
        let q = Quadratic { target: vec![0.0, 0.0] };
        let set = AtomSet::signed_basis(2, 1.0).unwrap();
        assert!(matches!(run_dicg(&q, &set, &adaptive(Algorithm::Dicg, 5)), Err(Error::Config(_))));
        assert!(run_pcg(&q, &set, &adaptive(Algorithm::Dicg, 5)).is_ok());
    }

    #[test]
    fn lifted_problem_folds_and_lifts() {
        let q = Quadratic { target: vec![0.5, -0.25] };
        let lifted = LiftedL1::new(q, 2.0).unwrap();
        let z = [0.25, 0.0, 0.0, 0.75];
        assert_eq!(lifted.fold(&z), vec![0.5, -1.5]);
        let b = lifted.gradient_batch(&z).unwrap();
        assert_eq!(b.sample(0), vec![0.0, -2.5, 0.0, 2.5]);
        assert_eq!(lifted.population_gradient(&z).unwrap(), b.sample(0));
        assert_eq!(lifted.reference().unwrap(), &[0.5, -0.25]);
    }

    #[test]
    fn pcg_and_dicg_agree_on_lifted_l1() {
        let q = Quadratic { target: vec![0.3, -0.2, 0.0, 0.1] };
        let set = AtomSet::signed_basis(4, 1.0).unwrap();
        let mut cfg = SolverConfig::new(
            Algorithm::Pcg,
            RobustEstimator::Mean,
            StepSchedule::FixedGeometric { eta0: 1.0 / 64.0, rho: 1.0 },
            300,
        );
        cfg.record_iterates = true;
        let pcg = run_pcg(&q, &set, &cfg).unwrap();
        let lifted = LiftedL1::new(Quadratic { target: q.target.clone() }, 1.0).unwrap();
        let simplex = AtomSet::simplex_vertices(8).unwrap();
        let dicg = run_dicg(&lifted, &simplex, &cfg).unwrap();
        assert_eq!(pcg.records.len(), dicg.records.len());
        for (a, b) in pcg.records.iter().zip(&dicg.records) {
            assert_eq!(a.fw_index, b.fw_index);
            assert!(l2_distance(a.signal.as_ref().unwrap(), b.signal.as_ref().unwrap()) <= 1e-8);
        }
        assert!(pcg.feasibility.pcg_ok());
        assert!(dicg.feasibility.dicg_ok());
    }

    #[test]
    fn mean_variants_reduce_to_each_other() {
        let q = Quadratic { target: vec![0.1, 0.5, 0.4] };
        let set = AtomSet::simplex_vertices(3).unwrap();
        let a = run_pcg(&q, &set, &adaptive(Algorithm::Pcg, 100)).unwrap();
        let b = run_pcg2(&q, &set, &adaptive(Algorithm::Pcg, 100)).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn coordinatewise_gradient_examples() {
        let b = GradientBatch::from_samples(&vec![vec![1.5, -2.0]; 4]).unwrap();
        let trm = RobustEstimator::TrimmedMean { trim_fraction: 0.2 };
        assert_eq!(coordinatewise_robust_gradient(&b, trm).unwrap(), vec![1.5, -2.0]);
        let samples: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.0, 100.0].iter().map(|&v| vec![v, v]).collect();
        let b = GradientBatch::from_samples(&samples).unwrap();
        assert_eq!(coordinatewise_robust_gradient(&b, trm).unwrap(), vec![2.0, 2.0]);
        assert_eq!(coordinatewise_robust_gradient(&b, RobustEstimator::Mean).unwrap(), b.mean());
    }

    #[test]
    fn zero_gradients_do_not_move() {
        struct Zero(usize);
        impl GradientOracle for Zero {
            fn dim(&self) -> usize {
                self.0
            }
            fn gradient_batch(&self, _: &[f64]) -> Result<GradientBatch> {
                GradientBatch::from_samples(&vec![vec![0.0; self.0]; 3])
            }
        }
        let set = AtomSet::signed_basis(3, 1.0).unwrap();
        let cfg = adaptive(Algorithm::Pcg2, 20);
        let trace = run_pcg2(&Zero(3), &set, &cfg).unwrap();
        assert_eq!(trace.final_iterate, set.atom(0).unwrap());
    }

    #[test]
    fn clean_mean_audit_is_zero() {
        let q = Quadratic { target: vec![0.2, 0.5, 0.3] };
        let set = AtomSet::simplex_vertices(3).unwrap();
        for alg in [Algorithm::Pcg, Algorithm::Dicg] {
            let trace = run_audited(&q, &set, &adaptive(alg, 50), &q).unwrap();
            assert!(trace.records.iter().all(|r| r.rasc_gap == Some(0.0)));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let q = Quadratic { target: vec![0.2, -0.5, 0.3] };
        let set = AtomSet::signed_basis(3, 1.0).unwrap();
        let cfg = adaptive(Algorithm::Pcg, 80);
        assert_eq!(run(&q, &set, &cfg).unwrap(), run(&q, &set, &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn pcg_iterates_stay_feasible(
            target in prop::collection::vec(-1.0..1.0f64, 2..6),
            c in 0.05..2.0f64,
        ) {
            let d = target.len();
            let q = Quadratic { target };
            let set = AtomSet::signed_basis(d, 1.0).unwrap();
            let cfg = SolverConfig::new(Algorithm::Pcg, RobustEstimator::Mean, StepSchedule::AdaptiveGap { c }, 60);
            let trace = run(&q, &set, &cfg).unwrap();
            prop_assert!(trace.feasibility.pcg_ok());
            let l1: f64 = trace.final_signal.iter().map(|v| v.abs()).sum();
            prop_assert!(l1 <= 1.0 + 1e-10);
        }

        #[test]
        fn dicg_iterates_stay_feasible(
            target in prop::collection::vec(-1.0..1.0f64, 2..6),
            eta0 in 0.01..1.0f64,
        ) {
            let d = target.len();
            let lifted = LiftedL1::new(Quadratic { target }, 1.0).unwrap();
            let set = AtomSet::simplex_vertices(2 * d).unwrap();
            let cfg = SolverConfig::new(
                Algorithm::Dicg,
                RobustEstimator::Mean,
                StepSchedule::FixedGeometric { eta0, rho: 0.97 },
                60,
            );
            let trace = run(&lifted, &set, &cfg).unwrap();
            prop_assert!(trace.feasibility.dicg_ok());
        }
    }
}
