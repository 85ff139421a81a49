//! Projection-free robust optimization over finite atomic sets.
//!
//! The crate implements pairwise conditional gradient (PCG) and its
//! decomposition-invariant variant (DICG), together with corruption-robust
//! versions driven either by a robust linear minimization oracle (per-atom
//! robust mean of gradient inner products) or by a coordinate-wise robust
//! gradient. Synthetic regression generators and diagnostics for the
//! robust atom selection condition are included so that experiments can be
//! reproduced end to end.
//!
//! Module map:
//!
//! - [`robust_mean`]: one-dimensional mean estimators (mean, median-of-means, trimmed mean)
//! - [`atoms`]: atomic sets, exact oracles, convex decompositions, DICG step logic
//! - [`rlmo`]: gradient batches and the robust linear minimization oracle
//! - [`solvers`]: PCG / DICG drivers and step-size schedules
//! - [`models`]: synthetic sparse regression problems and corruption models
//! - [`diagnostics`]: RASC audit, rate fitting, restricted eigenvalues

pub mod atoms;
pub mod diagnostics;
pub mod error;
pub mod models;
pub mod rlmo;
pub mod robust_mean;
pub mod solvers;

pub use error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
