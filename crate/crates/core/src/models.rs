//! Synthetic sparse linear regression.
//!
//! A [`RegressionProblem`] holds a design `X`, responses `y = X beta* + xi`,
//! and the ground truth `beta*`, built as a sparse convex combination of
//! atoms. Huber contamination overwrites `floor(eps * n)` rows after the
//! clean draw; heavy-tailed problems draw both design and noise from a
//! heavy-tailed law.
//!
//! Each ingredient uses its own ChaCha stream derived from the seed, so the
//! clean part of a problem does not depend on the corruption settings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::atoms::{AtomFamily, AtomSet};
use crate::diagnostics::PopulationOracle;
use crate::rlmo::GradientBatch;
use crate::solvers::GradientOracle;
use crate::{check_dim, Error, Result};

/// Population covariance of the design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SigmaX {
    Identity,
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl SigmaX {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            SigmaX::Identity => Ok(()),
            SigmaX::Diagonal(diag) => {
                check_dim(d, diag.len())?;
                if diag.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::param("diagonal covariance entries must be nonnegative"));
                }
                Ok(())
            }
            SigmaX::Dense(rows) => {
                check_dim(d, rows.len())?;
                for (i, row) in rows.iter().enumerate() {
                    check_dim(d, row.len())?;
                    for (j, v) in row.iter().enumerate() {
                        if (v - rows[j][i]).abs() > 1e-12 * (1.0 + v.abs()) {
                            return Err(Error::param("dense covariance must be symmetric"));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            SigmaX::Identity => Ok(v.to_vec()),
            SigmaX::Diagonal(diag) => {
                check_dim(diag.len(), v.len())?;
                Ok(diag.iter().zip(v).map(|(a, b)| a * b).collect())
            }
            SigmaX::Dense(rows) => {
                check_dim(rows.len(), v.len())?;
                rows.iter()
                    .map(|row| {
                        check_dim(v.len(), row.len())?;
                        Ok(crate::dot(row, v))
                    })
                    .collect()
            }
        }
    }

    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            SigmaX::Identity => DMatrix::identity(d, d),
            SigmaX::Diagonal(diag) => DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            SigmaX::Dense(rows) => DMatrix::from_fn(d, d, |i, j| rows[i][j]),
        }
    }
}

/// `Sigma_x (beta - beta_star)`: the population gradient of the squared loss.
pub fn population_gradient(sigma_x: &SigmaX, beta: &[f64], beta_star: &[f64]) -> Result<Vec<f64>> {
    check_dim(beta_star.len(), beta.len())?;
    let diff: Vec<f64> = beta.iter().zip(beta_star).map(|(a, b)| a - b).collect();
    sigma_x.apply(&diff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adversary {
    /// `y_i <- -sign(y_i) * magnitude * max|y|`.
    ResponseFlip { magnitude: f64 },
    /// `x_i <- -scale * beta*/|beta*|`, `y_i <- -scale`.
    LeveragePoint { scale: f64 },
    /// `x_i ~ N(0, scale I)`, `y_i ~ N(0, scale)`, independent of `beta*`.
    ObliviousGaussian { scale: f64 },
}

impl Default for Adversary {
    fn default() -> Self {
        Adversary::ResponseFlip { magnitude: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeavyTailDistribution {
    /// `exp(Z) - exp(1/2)`, `Z ~ N(0, 1)`.
    LogNormalCentered,
    /// `exp(Z)` without centering.
    LogNormalRaw,
    StudentT { dof: f64 },
}

impl HeavyTailDistribution {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            HeavyTailDistribution::LogNormalCentered => centered_log_normal(rng),
            HeavyTailDistribution::LogNormalRaw => rng.sample::<f64, _>(StandardNormal).exp(),
            HeavyTailDistribution::StudentT { dof } => StudentT::new(dof).expect("validated dof").sample(rng),
        }
    }

    /// Population second moment of one draw, when finite.
    pub fn second_moment(&self) -> Option<f64> {
        let e = std::f64::consts::E;
        match *self {
            HeavyTailDistribution::LogNormalCentered => Some(e * (e - 1.0)),
            HeavyTailDistribution::LogNormalRaw => Some(e * e),
            HeavyTailDistribution::StudentT { dof } if dof > 2.0 => Some(dof / (dof - 2.0)),
            HeavyTailDistribution::StudentT { .. } => None,
        }
    }
}

pub fn centered_log_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal).exp() - 0.5f64.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSpec {
    #[default]
    None,
    Huber { epsilon: f64, adversary: Adversary },
    HeavyTail { distribution: HeavyTailDistribution },
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionSpec::None => Ok(()),
            CorruptionSpec::Huber { epsilon, adversary } => {
                if !(0.0..0.5).contains(&epsilon) {
                    return Err(Error::param(format!("epsilon must lie in [0, 0.5), got {epsilon}")));
                }
                let scale = match adversary {
                    Adversary::ResponseFlip { magnitude } => magnitude,
                    Adversary::LeveragePoint { scale } | Adversary::ObliviousGaussian { scale } => scale,
                };
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::param("adversary scale must be positive and finite"));
                }
                Ok(())
            }
            CorruptionSpec::HeavyTail { distribution } => match distribution {
                HeavyTailDistribution::StudentT { dof } if !(dof > 0.0) => {
                    Err(Error::param(format!("StudentT dof must be positive, got {dof}")))
                }
                _ => Ok(()),
            },
        }
    }

    pub fn epsilon(&self) -> f64 {
        match *self {
            CorruptionSpec::Huber { epsilon, .. } => epsilon,
            _ => 0.0,
        }
    }

    /// `floor(eps * n)` for Huber contamination, 0 otherwise.
    pub fn corrupted_count(&self, n: usize) -> usize {
        match *self {
            CorruptionSpec::Huber { epsilon, .. } => (epsilon * n as f64 + 1e-9).floor() as usize,
            _ => 0,
        }
    }
}

/// The standard orthonormal Haar basis of `R^d`, `d` a power of two: the
/// constant vector first, then wavelets from the coarsest to the finest
/// level, left to right within a level.
pub fn haar_basis_matrix(d: usize) -> Result<Vec<Vec<f64>>> {
    if d < 2 || !d.is_power_of_two() {
        return Err(Error::param(format!("Haar dimension must be a power of two >= 2, got {d}")));
    }
    let mut basis = Vec::with_capacity(d);
    basis.push(vec![1.0 / (d as f64).sqrt(); d]);
    let mut width = d;
    while width >= 2 {
        let half = width / 2;
        let v = 1.0 / (width as f64).sqrt();
        for start in (0..d).step_by(width) {
            let mut h = vec![0.0; d];
            h[start..start + half].fill(v);
            h[start + half..start + width].fill(-v);
            basis.push(h);
        }
        width = half;
    }
    Ok(basis)
}

/// Indices of `s` atoms with no atom paired with its own negation.
fn pick_atoms(set: &AtomSet, s: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match set.family() {
        AtomFamily::SignedBasis | AtomFamily::HaarSigned => {
            let d = set.dim();
            let mut picked: Vec<usize> = sample_indices(rng, d, s)
                .into_iter()
                .map(|j| if rng.gen_bool(0.5) { j } else { j + d })
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => {
            let mut picked = sample_indices(rng, set.len(), s).into_vec();
            picked.sort_unstable();
            picked
        }
    }
}

/// `scale * sum_k w_k a_{atoms[k]}`.
pub fn signal_from_atoms(set: &AtomSet, atoms: &[usize], weights: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_dim(atoms.len(), weights.len())?;
    let mut out = vec![0.0; set.dim()];
    for (&i, &w) in atoms.iter().zip(weights) {
        if i >= set.len() {
            return Err(Error::IndexOutOfRange { index: i, count: set.len() });
        }
        set.add_scaled(i, scale * w, &mut out);
    }
    Ok(out)
}

/// Convex combination of `s` distinct atoms with symmetric Dirichlet(1)
/// weights, multiplied by `scale` (0.9 keeps the signal interior, 1.0
/// puts it on the boundary).
pub fn sparse_signal(set: &AtomSet, s: usize, scale: f64, seed: u64) -> Result<Vec<f64>> {
    if s == 0 || s > set.len() / 2 {
        return Err(Error::param(format!(
            "sparsity must lie in [1, {}], got {s}",
            set.len() / 2
        )));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::param(format!("signal scale must lie in (0, 1], got {scale}")));
    }
    let mut rng = stream(seed, Stream::Signal);
    let atoms = pick_atoms(set, s, &mut rng);
    let weights = if s == 1 {
        vec![1.0]
    } else {
        Dirichlet::new_with_size(1.0, s)
            .map_err(|e| Error::param(e.to_string()))?
            .sample(&mut rng)
    };
    signal_from_atoms(set, &atoms, &weights, scale)
}

#[derive(Clone, Copy)]
enum Stream {
    Signal = 0,
    Design = 1,
    Noise = 2,
    Corruption = 3,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Parameters of a synthetic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub sparsity: usize,
    pub sigma: f64,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    /// Design covariance for Gaussian designs.
    #[serde(default = "identity")]
    pub sigma_x: SigmaX,
    #[serde(default = "interior_scale")]
    pub signal_scale: f64,
}

fn identity() -> SigmaX {
    SigmaX::Identity
}

fn interior_scale() -> f64 {
    0.9
}

impl ProblemSpec {
    pub fn new(n: usize, sparsity: usize, sigma: f64, corruption: CorruptionSpec) -> Self {
        ProblemSpec { n, sparsity, sigma, corruption, sigma_x: SigmaX::Identity, signal_scale: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    n: usize,
    d: usize,
    /// Column-major design: `cols[j * n + i] = X[i, j]`.
    cols: Vec<f64>,
    pub y: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub sigma: f64,
    pub sparsity: usize,
    pub corruption: CorruptionSpec,
    /// Population covariance of clean design rows.
    pub sigma_x: SigmaX,
    pub corrupted: Vec<bool>,
    pub seed: u64,
}

/// Draws a problem whose signal is sparse over `set`.
pub fn generate(set: &AtomSet, spec: &ProblemSpec, seed: u64) -> Result<RegressionProblem> {
    let (n, d) = (spec.n, set.dim());
    if n == 0 {
        return Err(Error::param("n must be positive"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be nonnegative, got {}", spec.sigma)));
    }
    spec.corruption.validate()?;
    spec.sigma_x.validate(d)?;
    let beta_star = sparse_signal(set, spec.sparsity, spec.signal_scale, seed)?;

    let mut design = stream(seed, Stream::Design);
    let mut noise_rng = stream(seed, Stream::Noise);
    let (mut cols, sigma_x, noise): (Vec<f64>, SigmaX, Vec<f64>) = match spec.corruption {
        CorruptionSpec::HeavyTail { distribution } => {
            let var = distribution
                .second_moment()
                .ok_or_else(|| Error::param("heavy-tailed design needs a finite second moment"))?;
            let rows: Vec<f64> = (0..n * d).map(|_| distribution.draw(&mut design)).collect();
            let noise = (0..n).map(|_| distribution.draw(&mut noise_rng)).collect();
            (transpose(&rows, n, d), SigmaX::Diagonal(vec![var; d]), noise)
        }
        _ => {
            let rows = gaussian_rows(&spec.sigma_x, n, d, &mut design)?;
            let noise = (0..n).map(|_| noise_rng.sample::<f64, _>(StandardNormal)).collect();
            (transpose(&rows, n, d), spec.sigma_x.clone(), noise)
        }
    };

    let mut y = vec![0.0; n];
    accumulate_xb(&cols, n, &beta_star, &mut y);
    for (yi, e) in y.iter_mut().zip(&noise) {
        *yi += spec.sigma * e;
    }

    let mut corrupted = vec![false; n];
    if let CorruptionSpec::Huber { adversary, .. } = spec.corruption {
        let count = spec.corruption.corrupted_count(n);
        let mut rng = stream(seed, Stream::Corruption);
        let mut bad = sample_indices(&mut rng, n, count).into_vec();
        bad.sort_unstable();
        let y_inf = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let norm = crate::dot(&beta_star, &beta_star).sqrt();
        for &i in &bad {
            corrupted[i] = true;
            match adversary {
                Adversary::ResponseFlip { magnitude } => {
                    let sign = if y[i] < 0.0 { -1.0 } else { 1.0 };
                    y[i] = -sign * magnitude * y_inf;
                }
                Adversary::LeveragePoint { scale } => {
                    for j in 0..d {
                        cols[j * n + i] = -scale * beta_star[j] / norm;
                    }
                    y[i] = -scale;
                }
                Adversary::ObliviousGaussian { scale } => {
                    let sd = scale.sqrt();
                    for j in 0..d {
                        cols[j * n + i] = sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    y[i] = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }

    Ok(RegressionProblem {
        n,
        d,
        cols,
        y,
        beta_star,
        sigma: spec.sigma,
        sparsity: spec.sparsity,
        corruption: spec.corruption,
        sigma_x,
        corrupted,
        seed,
    })
}

fn gaussian_rows(sigma_x: &SigmaX, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let z: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    match sigma_x {
        SigmaX::Identity => Ok(z),
        SigmaX::Diagonal(diag) => Ok(z
            .chunks(d)
            .flat_map(|row| row.iter().zip(diag).map(|(v, s)| v * s.sqrt()).collect::<Vec<_>>())
            .collect()),
        SigmaX::Dense(_) => {
            let l = sigma_x
                .to_matrix(d)
                .cholesky()
                .ok_or_else(|| Error::param("dense covariance must be positive definite"))?
                .l();
            let mut out = Vec::with_capacity(n * d);
            for row in z.chunks(d) {
                out.extend((&l * DVector::from_column_slice(row)).iter());
            }
            Ok(out)
        }
    }
}

fn transpose(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut cols = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            cols[j * n + i] = rows[i * d + j];
        }
    }
    cols
}

/// `out += X beta`, skipping zero coordinates of `beta`.
fn accumulate_xb(cols: &[f64], n: usize, beta: &[f64], out: &mut [f64]) {
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (o, x) in out.iter_mut().zip(&cols[j * n..(j + 1) * n]) {
                *o += b * x;
            }
        }
    }
}

impl RegressionProblem {
    /// Builds a problem from explicit data, e.g. for hand-made examples.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, beta_star: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let d = beta_star.len();
        check_dim(n, y.len())?;
        let mut flat = Vec::with_capacity(n * d);
        for row in rows {
            check_dim(d, row.len())?;
            flat.extend_from_slice(row);
        }
        Ok(RegressionProblem {
            n,
            d,
            cols: transpose(&flat, n, d),
            y,
            beta_star,
            sigma: 0.0,
            sparsity: 0,
            corruption: CorruptionSpec::None,
            sigma_x: SigmaX::Identity,
            corrupted: vec![false; n],
            seed: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.cols[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.d).map(|j| self.x(i, j)).collect()
    }

    /// Values of feature `j` across samples.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    pub fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, beta.len())?;
        let mut r: Vec<f64> = self.y.iter().map(|v| -v).collect();
        accumulate_xb(&self.cols, self.n, beta, &mut r);
        Ok(r)
    }

    /// Per-sample gradients `g_i = x_i (<x_i, beta> - y_i)`.
    pub fn gradient_batch(&self, beta: &[f64]) -> Result<GradientBatch> {
        let r = self.residuals(beta)?;
        let mut coords = Vec::with_capacity(self.n * self.d);
        for j in 0..self.d {
            coords.extend(self.column(j).iter().zip(&r).map(|(x, ri)| x * ri));
        }
        GradientBatch::from_coordinate_major(self.n, self.d, coords)
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|c| **c).count()
    }

    /// Empirical covariance `X_S^T X_S / |S|` over the uncorrupted rows.
    pub fn clean_covariance(&self) -> DMatrix<f64> {
        let clean: Vec<usize> = (0..self.n).filter(|&i| !self.corrupted[i]).collect();
        let m = clean.len().max(1) as f64;
        let x = DMatrix::from_fn(clean.len(), self.d, |r, j| self.x(clean[r], j));
        x.transpose() * &x / m
    }

    /// Writes `<stem>_X.csv`, `<stem>_y.csv` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str) -> Result<ProblemFiles> {
        let files = ProblemFiles::new(dir.as_ref(), stem);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&files.x)?;
        for i in 0..self.n {
            w.write_record(self.row(i).iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&files.y)?;
        for i in 0..self.n {
            w.write_record([format!("{:.16e}", self.y[i]), u8::from(self.corrupted[i]).to_string()])?;
        }
        w.flush()?;
        let meta = ProblemMeta {
            d: self.d,
            n: self.n,
            s: self.sparsity,
            sigma: self.sigma,
            epsilon: self.corruption.epsilon(),
            seed: self.seed,
            beta_star: self.beta_star.clone(),
            corruption: self.corruption,
            sigma_x: self.sigma_x.clone(),
        };
        let mut out = BufWriter::new(File::create(&files.meta)?);
        serde_json::to_writer_pretty(&mut out, &meta)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(files)
    }

    pub fn import(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let files = ProblemFiles::new(dir.as_ref(), stem);
        let meta: ProblemMeta = serde_json::from_reader(File::open(&files.meta)?)?;
        check_dim(meta.d, meta.beta_star.len())?;
        let mut rows = Vec::with_capacity(meta.n);
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(&files.x)?;
        for rec in r.records() {
            let row = rec?
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| Error::param(format!("bad float {f:?} in X"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let mut y = Vec::with_capacity(meta.n);
        let mut corrupted = Vec::with_capacity(meta.n);
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(&files.y)?;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::param("y file rows must be `y,corrupted_flag`"));
            }
            y.push(rec[0].trim().parse::<f64>().map_err(|_| Error::param("bad float in y"))?);
            corrupted.push(rec[1].trim() == "1");
        }
        check_dim(meta.n, rows.len())?;
        let mut p = RegressionProblem::from_rows(&rows, y, meta.beta_star)?;
        p.sigma = meta.sigma;
        p.sparsity = meta.s;
        p.corruption = meta.corruption;
        p.sigma_x = meta.sigma_x;
        p.corrupted = corrupted;
        p.seed = meta.seed;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemMeta {
    d: usize,
    n: usize,
    s: usize,
    sigma: f64,
    epsilon: f64,
    seed: u64,
    beta_star: Vec<f64>,
    corruption: CorruptionSpec,
    sigma_x: SigmaX,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFiles {
    pub x: PathBuf,
    pub y: PathBuf,
    pub meta: PathBuf,
}

impl ProblemFiles {
    fn new(dir: &Path, stem: &str) -> Self {
        ProblemFiles {
            x: dir.join(format!("{stem}_X.csv")),
            y: dir.join(format!("{stem}_y.csv")),
            meta: dir.join(format!("{stem}.json")),
        }
    }
}

impl GradientOracle for RegressionProblem {
    fn dim(&self) -> usize {
        self.d
    }

    fn gradient_batch(&self, iterate: &[f64]) -> Result<GradientBatch> {
        RegressionProblem::gradient_batch(self, iterate)
    }

    fn reference(&self) -> Option<&[f64]> {
        Some(&self.beta_star)
    }
}

impl PopulationOracle for RegressionProblem {
    fn population_gradient(&self, iterate: &[f64]) -> Result<Vec<f64>> {
        population_gradient(&self.sigma_x, iterate, &self.beta_star)
    }
}
