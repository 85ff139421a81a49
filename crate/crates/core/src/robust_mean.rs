//! One-dimensional mean estimators.
//!
//! Three estimators are provided: the empirical mean, median-of-means (MOM)
//! over contiguous index-order blocks, and the symmetric trimmed mean (TrM).
//! MOM targets heavy-tailed samples, TrM targets an ε fraction of arbitrary
//! outliers. All functions are pure.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Configuration of a one-dimensional mean estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobustEstimator {
    Mean,
    MedianOfMeans { blocks: usize },
    TrimmedMean { trim_fraction: f64 },
}

impl RobustEstimator {
    pub fn estimate(&self, samples: &[f64]) -> Result<f64> {
        estimate(*self, samples)
    }

    /// Same as [`RobustEstimator::estimate`], but may reorder `samples` in
    /// place instead of allocating a sorted copy.
    pub fn estimate_mut(&self, samples: &mut [f64]) -> Result<f64> {
        match *self {
            RobustEstimator::Mean => empirical_mean(samples),
            RobustEstimator::MedianOfMeans { blocks } => median_of_means(samples, blocks),
            RobustEstimator::TrimmedMean { trim_fraction } => {
                check_trim(samples.len(), trim_fraction)?;
                samples.sort_unstable_by(f64::total_cmp);
                Ok(trimmed_sorted(samples, trim_fraction))
            }
        }
    }

    /// Checks the estimator's preconditions for `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        match *self {
            RobustEstimator::Mean => Ok(()),
            RobustEstimator::MedianOfMeans { blocks } => check_blocks(n, blocks),
            RobustEstimator::TrimmedMean { trim_fraction } => check_trim(n, trim_fraction),
        }
    }

    /// `estimate(-x) == -estimate(x)` holds bit-for-bit.
    pub fn is_exactly_odd(&self) -> bool {
        !matches!(self, RobustEstimator::TrimmedMean { .. })
    }
}

pub fn empirical_mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Start offsets of `blocks` contiguous blocks over `n` samples; block `k`
/// spans `bounds[k]..bounds[k + 1]`. Sizes differ by at most one.
pub fn block_bounds(n: usize, blocks: usize) -> Vec<usize> {
    (0..=blocks).map(|k| k * n / blocks).collect()
}

fn check_blocks(n: usize, blocks: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    if blocks == 0 || blocks > n {
        return Err(Error::param(format!(
            "median-of-means needs 1 <= blocks <= {n}, got {blocks}"
        )));
    }
    Ok(())
}

/// Median of the block means of `blocks` contiguous blocks.
///
/// For an even block count the two central block means are averaged.
pub fn median_of_means(samples: &[f64], blocks: usize) -> Result<f64> {
    let n = samples.len();
    check_blocks(n, blocks)?;
    let bounds = block_bounds(n, blocks);
    let mut means: Vec<f64> = bounds
        .windows(2)
        .map(|w| {
            let block = &samples[w[0]..w[1]];
            block.iter().sum::<f64>() / block.len() as f64
        })
        .collect();
    Ok(median_in_place(&mut means))
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let k = values.len();
    let mid = k / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if k % 2 == 1 {
        upper
    } else {
        let below = lower
            .iter()
            .copied()
            .max_by(f64::total_cmp)
            .expect("even count leaves a non-empty lower half");
        (below + upper) / 2.0
    }
}

/// Number of samples removed from each tail: `ceil(alpha * n)`.
///
/// A 1e-9 slack absorbs representation error in `alpha` (0.1 * 300 must give
/// 30, not 31).
pub fn trim_count(n: usize, trim_fraction: f64) -> usize {
    let raw = trim_fraction * n as f64 - 1e-9;
    if raw <= 0.0 {
        0
    } else {
        raw.ceil() as usize
    }
}

fn check_trim(n: usize, trim_fraction: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::param(format!(
            "trim fraction must lie in [0, 0.5), got {trim_fraction}"
        )));
    }
    let k = trim_count(n, trim_fraction);
    if 2 * k >= n {
        return Err(Error::param(format!(
            "trimming {k} from each tail of {n} samples leaves nothing"
        )));
    }
    Ok(())
}

fn trimmed_sorted(sorted: &[f64], trim_fraction: f64) -> f64 {
    let n = sorted.len();
    let k = trim_count(n, trim_fraction);
    let kept = &sorted[k..n - k];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Mean after removing the `ceil(alpha * n)` smallest and largest samples.
pub fn trimmed_mean(samples: &[f64], trim_fraction: f64) -> Result<f64> {
    check_trim(samples.len(), trim_fraction)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(trimmed_sorted(&sorted, trim_fraction))
}

/// MOM block count `ceil(18 ln |A|)` for an atomic set of size `atom_count`.
pub fn default_mom_blocks(atom_count: usize) -> Result<usize> {
    if atom_count < 2 {
        return Err(Error::param(format!(
            "atom count must be at least 2, got {atom_count}"
        )));
    }
    Ok((18.0 * (atom_count as f64).ln()).ceil() as usize)
}

/// Caps a block count at `floor(n / 4)` (and at least one block).
pub fn clamp_blocks(blocks: usize, n: usize) -> usize {
    blocks.min(n / 4).max(1)
}

pub fn estimate(estimator: RobustEstimator, samples: &[f64]) -> Result<f64> {
    match estimator {
        RobustEstimator::Mean => empirical_mean(samples),
        RobustEstimator::MedianOfMeans { blocks } => median_of_means(samples, blocks),
        RobustEstimator::TrimmedMean { trim_fraction } => trimmed_mean(samples, trim_fraction),
    }
}
