//! Auditing robust atom selection against the exact population gradient,
//! and rate fitting on traces.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::solvers::RunTrace;
use crate::{check_dim, dot, Error, Result};

/// Exact population gradient at a solver iterate.
pub trait PopulationOracle {
    fn population_gradient(&self, iterate: &[f64]) -> Result<Vec<f64>>;
}

impl<P: PopulationOracle + ?Sized> PopulationOracle for &P {
    fn population_gradient(&self, iterate: &[f64]) -> Result<Vec<f64>> {
        (**self).population_gradient(iterate)
    }
}

/// `|<G, exact_dir - robust_dir>|`.
pub fn rasc_gap(pop_grad: &[f64], exact_dir: &[f64], robust_dir: &[f64]) -> Result<f64> {
    check_dim(pop_grad.len(), exact_dir.len())?;
    check_dim(pop_grad.len(), robust_dir.len())?;
    Ok((dot(pop_grad, exact_dir) - dot(pop_grad, robust_dir)).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RascRecord {
    pub iter: usize,
    pub xdist: f64,
    pub gap: f64,
}

/// Records of an audited trace; iterations without an audit or a known
/// reference are skipped.
pub fn rasc_records(trace: &RunTrace) -> Vec<RascRecord> {
    trace
        .records
        .iter()
        .filter_map(|r| Some(RascRecord { iter: r.iter, xdist: r.xdist?, gap: r.rasc_gap? }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RascFit {
    pub theta_hat: f64,
    pub psi_hat: f64,
    pub coverage: f64,
}

/// Required fraction of records satisfying the bound.
pub const RASC_COVERAGE: f64 = 0.95;

const GRID: usize = 100;

/// Whether `gap <= 4 theta xdist + 4 psi` (with a rounding allowance of a
/// few ulps).
pub fn rasc_covers(record: &RascRecord, theta: f64, psi: f64) -> bool {
    let bound = 4.0 * theta * record.xdist + 4.0 * psi;
    record.gap <= bound * (1.0 + 1e-12)
}

pub fn rasc_coverage(records: &[RascRecord], theta: f64, psi: f64) -> f64 {
    let hits = records.iter().filter(|r| rasc_covers(r, theta, psi)).count();
    hits as f64 / records.len() as f64
}

fn linspace(hi: f64) -> impl Iterator<Item = f64> {
    (0..GRID).map(move |k| if k + 1 == GRID { hi } else { hi * k as f64 / (GRID - 1) as f64 })
}

/// Smallest `(theta, psi)` on a 100 x 100 grid, minimizing `psi` first and
/// then `theta`, whose bound covers at least 95% of the records.
///
/// The theta grid spans `[0, max gap / (4 xdist)]` and the psi grid spans
/// `[0, max gap / 4]`, so `(0, max gap / 4)` always qualifies.
pub fn fit_rasc(records: &[RascRecord]) -> Result<RascFit> {
    if records.len() < 10 {
        return Err(Error::param(format!("need at least 10 records, got {}", records.len())));
    }
    if records.iter().any(|r| !(r.gap >= 0.0 && r.xdist >= 0.0)) {
        return Err(Error::param("gaps and distances must be nonnegative"));
    }
    let theta_max = records
        .iter()
        .filter(|r| r.xdist > 0.0)
        .map(|r| r.gap / (4.0 * r.xdist))
        .fold(0.0, f64::max);
    let psi_max = records.iter().map(|r| r.gap / 4.0).fold(0.0, f64::max);
    for psi in linspace(psi_max) {
        for theta in linspace(theta_max) {
            let coverage = rasc_coverage(records, theta, psi);
            if coverage >= RASC_COVERAGE {
                return Ok(RascFit { theta_hat: theta, psi_hat: psi, coverage });
            }
        }
    }
    Ok(RascFit { theta_hat: 0.0, psi_hat: psi_max, coverage: rasc_coverage(records, 0.0, psi_max) })
}

/// `alpha_l / (16 sqrt(card))`.
pub fn rasc_threshold(alpha_l: f64, card: usize) -> f64 {
    alpha_l / (16.0 * (card as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RascSummary {
    pub theta_hat: f64,
    pub psi_hat: f64,
    pub coverage: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl RascSummary {
    pub fn new(fit: RascFit, threshold: f64) -> Self {
        RascSummary {
            theta_hat: fit.theta_hat,
            psi_hat: fit.psi_hat,
            coverage: fit.coverage,
            threshold,
            pass: fit.coverage >= RASC_COVERAGE && fit.theta_hat <= threshold,
        }
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Least-squares slope of `ln ys` against `ln xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_dim(xs.len(), ys.len())?;
    if xs.len() < 3 {
        return Err(Error::param("need at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::param("log-log slope needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    if lx.iter().all(|v| *v == lx[0]) {
        return Err(Error::param("xs must not all be equal"));
    }
    Ok(least_squares_slope(&lx, &ly))
}

/// Slope of `ln xdist` per iteration before the trace settles.
///
/// The floor is the median of the last 10% of values; the descent segment
/// runs from the start to the first value within 10x of the floor. Returns
/// `None` when that segment has fewer than 3 points.
pub fn pre_plateau_slope(xdists: &[f64]) -> Option<f64> {
    if xdists.len() < 3 || xdists.iter().any(|v| !(*v >= 0.0)) {
        return None;
    }
    let tail = (xdists.len() / 10).max(1);
    let mut last: Vec<f64> = xdists[xdists.len() - tail..].to_vec();
    last.sort_unstable_by(f64::total_cmp);
    let floor = last[last.len() / 2];
    let end = xdists.iter().position(|&v| v <= 10.0 * floor).unwrap_or(xdists.len());
    let segment: Vec<(f64, f64)> = xdists[..end]
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (t as f64, v.ln()))
        .collect();
    if segment.len() < 3 {
        return None;
    }
    let (ts, ls): (Vec<f64>, Vec<f64>) = segment.into_iter().unzip();
    Some(least_squares_slope(&ts, &ls))
}

/// Smallest eigenvalue of `cov` restricted to the coordinates in `support`.
pub fn restricted_min_eigenvalue(cov: &DMatrix<f64>, support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::param("support must be non-empty"));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= cov.nrows()) {
        return Err(Error::IndexOutOfRange { index: j, count: cov.nrows() });
    }
    let sub = DMatrix::from_fn(support.len(), support.len(), |a, b| cov[(support[a], support[b])]);
    Ok(SymmetricEigen::new(sub).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Coordinates with `|v_j| > tol`.
pub fn support(v: &[f64], tol: f64) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, x)| x.abs() > tol).map(|(j, _)| j).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn records(pairs: &[(f64, f64)]) -> Vec<RascRecord> {
        pairs.iter().enumerate().map(|(i, &(xdist, gap))| RascRecord { iter: i, xdist, gap }).collect()
    }

    #[test]
    fn rasc_gap_examples() {
        assert_eq!(rasc_gap(&[1.0, 2.0], &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(rasc_gap(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(rasc_gap(&[1.0], &[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn fit_examples() {
        let zeros = records(&vec![(0.5, 0.0); 20]);
        assert_eq!(fit_rasc(&zeros).unwrap(), RascFit { theta_hat: 0.0, psi_hat: 0.0, coverage: 1.0 });

        let exact: Vec<(f64, f64)> = (1..=30).map(|k| (k as f64 / 7.0, 4.0 * k as f64 / 7.0)).collect();
        let fit = fit_rasc(&records(&exact)).unwrap();
        assert!((fit.theta_hat - 1.0).abs() < 1e-12);
        assert_eq!(fit.psi_hat, 0.0);
        assert_eq!(fit.coverage, 1.0);

        assert!(fit_rasc(&records(&[(1.0, 1.0); 9])).is_err());
    }

    #[test]
    fn fit_prefers_small_psi() {
        // Gaps at zero distance can only be covered by psi.
        let pairs: Vec<(f64, f64)> = (0..40).map(|k| (if k % 5 == 0 { 0.0 } else { 1.0 }, 0.01)).collect();
        let fit = fit_rasc(&records(&pairs)).unwrap();
        assert!(fit.psi_hat > 0.0);
        assert!(fit.coverage >= 0.95);
    }

    #[test]
    fn threshold_and_summary() {
        assert_eq!(rasc_threshold(0.64, 4), 0.02);
        let fit = RascFit { theta_hat: 0.01, psi_hat: 0.0, coverage: 0.97 };
        assert!(RascSummary::new(fit, 0.02).pass);
        assert!(!RascSummary::new(fit, 0.005).pass);
        let fit = RascFit { theta_hat: 0.0, psi_hat: 0.0, coverage: 0.9 };
        assert!(!RascSummary::new(fit, 1.0).pass);
    }

    #[test]
    fn loglog_examples() {
        let xs = [1.0, 4.0, 16.0, 100.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 1.0 / x.sqrt()).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert!(loglog_slope(&xs, &[2.0; 4]).unwrap().abs() < 1e-12);
        assert!(loglog_slope(&xs, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pre_plateau_on_geometric_then_flat() {
        let mut xs: Vec<f64> = (0..100).map(|t| 0.9f64.powi(t)).collect();
        let floor = xs[99];
        xs.extend(std::iter::repeat_n(floor, 100));
        let slope = pre_plateau_slope(&xs).unwrap();
        assert!((slope - 0.9f64.ln()).abs() < 1e-9);
        assert!(pre_plateau_slope(&[1.0, 1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn restricted_eigenvalue() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.1]);
        assert!((restricted_min_eigenvalue(&cov, &[0, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert!((restricted_min_eigenvalue(&cov, &[0, 1, 2]).unwrap() - 0.1).abs() < 1e-12);
        assert!(restricted_min_eigenvalue(&cov, &[3]).is_err());
        assert_eq!(support(&[0.0, 1e-3, -2.0], 1e-12), vec![1, 2]);
    }

    proptest! {
        #[test]
        fn fit_is_a_certificate(pairs in prop::collection::vec((0.0..2.0f64, 0.0..1.0f64), 10..60)) {
            let recs = records(&pairs);
            let fit = fit_rasc(&recs).unwrap();
            prop_assert_eq!(rasc_coverage(&recs, fit.theta_hat, fit.psi_hat), fit.coverage);
            prop_assert!(fit.coverage >= RASC_COVERAGE);
            prop_assert!(fit.theta_hat >= 0.0 && fit.psi_hat >= 0.0);
        }

        #[test]
        fn rasc_gap_is_symmetric(
            g in prop::collection::vec(-5.0..5.0f64, 4),
            a in prop::collection::vec(-1.0..1.0f64, 4),
            b in prop::collection::vec(-1.0..1.0f64, 4),
        ) {
            prop_assert_eq!(rasc_gap(&g, &a, &b).unwrap(), rasc_gap(&g, &b, &a).unwrap());
        }
    }
}
