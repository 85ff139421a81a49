//! Robust linear minimization oracle.
//!
//! Given per-sample gradients `g_1..g_n`, each candidate atom `a` receives
//! the score `estimate([<a, g_1>, ..., <a, g_n>])`. The FW atom minimizes
//! the score; the away atom maximizes it, which is computed as the minimizer
//! over negated samples.

use std::cell::Cell;

use crate::atoms::AtomSet;
use crate::robust_mean::RobustEstimator;
use crate::{check_dim, Error, Result};

thread_local! {
    static INNER_PRODUCTS: Cell<u64> = const { Cell::new(0) };
}

/// Number of atom-sample inner products evaluated on this thread.
pub fn inner_product_count() -> u64 {
    INNER_PRODUCTS.with(Cell::get)
}

pub fn reset_inner_product_count() {
    INNER_PRODUCTS.with(|c| c.set(0));
}

fn count_inner_products(k: usize) {
    INNER_PRODUCTS.with(|c| c.set(c.get() + k as u64));
}

/// `n` per-sample gradients in `R^d`, stored coordinate-major so that the
/// values of coordinate `j` across samples are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    n: usize,
    dim: usize,
    coords: Vec<f64>,
}

impl GradientBatch {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let dim = samples[0].len();
        let mut coords = vec![0.0; n * dim];
        for (i, s) in samples.iter().enumerate() {
            check_dim(dim, s.len())?;
            for (j, &v) in s.iter().enumerate() {
                coords[j * n + i] = v;
            }
        }
        Ok(GradientBatch { n, dim, coords })
    }

    /// Wraps a buffer where `coords[j * n + i]` is coordinate `j` of sample `i`.
    pub fn from_coordinate_major(n: usize, dim: usize, coords: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        check_dim(n * dim, coords.len())?;
        Ok(GradientBatch { n, dim, coords })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Values of coordinate `j` across all samples.
    pub fn coordinate(&self, j: usize) -> &[f64] {
        &self.coords[j * self.n..(j + 1) * self.n]
    }

    pub fn sample(&self, i: usize) -> Vec<f64> {
        (0..self.dim).map(|j| self.coords[j * self.n + i]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.coordinate(j).iter().sum::<f64>() / self.n as f64)
            .collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        GradientBatch {
            n: self.n,
            dim: self.dim,
            coords: self.coords.iter().map(|v| c * v).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Writes `<a_index, g_i>` for every sample into `out`.
    pub fn atom_products(&self, set: &AtomSet, index: usize, out: &mut [f64]) {
        out.fill(0.0);
        set.for_each_nonzero(index, |j, a| {
            for (o, g) in out.iter_mut().zip(self.coordinate(j)) {
                *o += a * g;
            }
        });
        count_inner_products(self.n);
    }

    /// Writes `<w, g_i>` for every sample into `out`.
    pub fn direction_products(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                for (o, g) in out.iter_mut().zip(self.coordinate(j)) {
                    *o += wj * g;
                }
            }
        }
    }
}

fn check_candidates(batch: &GradientBatch, set: &AtomSet, candidates: &[usize]) -> Result<()> {
    check_dim(set.dim(), batch.dim())?;
    if candidates.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= set.len()) {
        return Err(Error::IndexOutOfRange { index: bad, count: set.len() });
    }
    Ok(())
}

fn scores_with_sign(
    batch: &GradientBatch,
    set: &AtomSet,
    candidates: &[usize],
    estimator: RobustEstimator,
    sign: f64,
) -> Result<Vec<(usize, f64)>> {
    check_candidates(batch, set, candidates)?;
    estimator.validate(batch.n())?;
    let mut buf = vec![0.0; batch.n()];
    candidates
        .iter()
        .map(|&i| {
            batch.atom_products(set, i, &mut buf);
            if sign < 0.0 {
                buf.iter_mut().for_each(|v| *v = -*v);
            }
            Ok((i, estimator.estimate_mut(&mut buf)?))
        })
        .collect()
}

fn argmin(scores: &[(usize, f64)]) -> (usize, f64) {
    let mut best = scores[0];
    for &(i, s) in &scores[1..] {
        if s < best.1 || (s == best.1 && i < best.0) {
            best = (i, s);
        }
    }
    best
}

/// Robust score of every candidate atom, in candidate order.
pub fn robust_scores(
    batch: &GradientBatch,
    set: &AtomSet,
    candidates: &[usize],
    estimator: RobustEstimator,
) -> Result<Vec<(usize, f64)>> {
    scores_with_sign(batch, set, candidates, estimator, 1.0)
}

/// Robust FW atom: the minimizer of the robust scores over all atoms.
pub fn rlmo_fw(batch: &GradientBatch, set: &AtomSet, estimator: RobustEstimator) -> Result<(usize, f64)> {
    let all: Vec<usize> = (0..set.len()).collect();
    Ok(argmin(&robust_scores(batch, set, &all, estimator)?))
}

/// Robust away atom among `candidates`.
///
/// Scores negated samples and takes the minimizer. The returned score is
/// the negation of that minimum, i.e. a robust estimate of `<a, G>`.
pub fn rlmo_away(
    batch: &GradientBatch,
    set: &AtomSet,
    candidates: &[usize],
    estimator: RobustEstimator,
) -> Result<(usize, f64)> {
    let scores = scores_with_sign(batch, set, candidates, estimator, -1.0)?;
    let (i, s) = argmin(&scores);
    Ok((i, -s))
}

/// Robust estimate of `<G, iterate - fw_atom>`. May be negative under
/// corruption; callers clamp.
pub fn robust_duality_gap(
    batch: &GradientBatch,
    iterate: &[f64],
    fw_atom: &[f64],
    estimator: RobustEstimator,
) -> Result<f64> {
    check_dim(batch.dim(), iterate.len())?;
    check_dim(batch.dim(), fw_atom.len())?;
    let w: Vec<f64> = iterate.iter().zip(fw_atom).map(|(x, v)| x - v).collect();
    let mut buf = vec![0.0; batch.n()];
    batch.direction_products(&w, &mut buf);
    estimator.estimate_mut(&mut buf)
}
