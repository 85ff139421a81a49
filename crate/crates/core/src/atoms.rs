//! Finite atomic sets and the exact oracles over them.
//!
//! An [`AtomSet`] is an enumerable list of atoms whose convex hull is the
//! feasible region. Structured families (signed basis, simplex vertices,
//! signed Haar wavelets) materialize atoms on demand from a sparse
//! description. This module also holds the bookkeeping for pairwise steps:
//! the convex [`Decomposition`] used by PCG and the support-masking and
//! dyadic step rules used by DICG.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::models::haar_basis_matrix;
use crate::{check_dim, Error, Result};

/// Coordinates at or below this value count as outside the DICG support.
pub const SUPPORT_TOL: f64 = 1e-10;

/// Decomposition weights below this value are dropped.
pub const DROP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomFamily {
    Explicit,
    SignedBasis,
    SimplexVertices,
    HaarSigned,
}

#[derive(Debug, Clone, PartialEq)]
struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    fn from_dense(v: &[f64]) -> Self {
        let (indices, values) = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .unzip();
        SparseVector { indices, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Explicit { atoms: Vec<SparseVector> },
    SignedBasis { radius: f64 },
    SimplexVertices,
    HaarSigned { radius: f64, basis: Vec<SparseVector> },
}

/// A finite set of atoms in `R^d`.
///
/// Indexing conventions: `SignedBasis` lists `+D e_1 .. +D e_d` then
/// `-D e_1 .. -D e_d`; `HaarSigned` does the same with the orthonormal Haar
/// basis in place of the standard basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSet {
    dim: usize,
    kind: Kind,
}

impl AtomSet {
    pub fn explicit(atoms: Vec<Vec<f64>>) -> Result<Self> {
        if atoms.len() < 2 {
            return Err(Error::param("an atomic set needs at least two atoms"));
        }
        let dim = atoms[0].len();
        if dim == 0 {
            return Err(Error::param("atoms must have positive dimension"));
        }
        for a in &atoms {
            check_dim(dim, a.len())?;
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("atoms must have finite coordinates"));
            }
        }
        let atoms = atoms.iter().map(|a| SparseVector::from_dense(a)).collect();
        Ok(AtomSet { dim, kind: Kind::Explicit { atoms } })
    }

    pub fn signed_basis(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        check_radius(radius)?;
        Ok(AtomSet { dim, kind: Kind::SignedBasis { radius } })
    }

    pub fn simplex_vertices(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::param("a simplex needs dimension at least 2"));
        }
        Ok(AtomSet { dim, kind: Kind::SimplexVertices })
    }

    pub fn haar_signed(dim: usize, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let basis = haar_basis_matrix(dim)?
            .iter()
            .map(|h| SparseVector::from_dense(h))
            .collect();
        Ok(AtomSet { dim, kind: Kind::HaarSigned { radius, basis } })
    }

    /// Loads an explicit atom set: one atom per row, comma-separated, no header.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut atoms = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let atom = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::param(format!("row {}: cannot parse {field:?} as a float", row + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            atoms.push(atom);
        }
        Self::explicit(atoms)
    }

    pub fn family(&self) -> AtomFamily {
        match self.kind {
            Kind::Explicit { .. } => AtomFamily::Explicit,
            Kind::SignedBasis { .. } => AtomFamily::SignedBasis,
            Kind::SimplexVertices => AtomFamily::SimplexVertices,
            Kind::HaarSigned { .. } => AtomFamily::HaarSigned,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms `|A|`.
    pub fn len(&self) -> usize {
        match &self.kind {
            Kind::Explicit { atoms } => atoms.len(),
            Kind::SignedBasis { .. } | Kind::HaarSigned { .. } => 2 * self.dim,
            Kind::SimplexVertices => self.dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            Kind::SignedBasis { radius } | Kind::HaarSigned { radius, .. } => Some(radius),
            _ => None,
        }
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index, count: self.len() })
        }
    }

    /// Calls `f(coordinate, value)` for every nonzero coordinate of atom
    /// `index`, in increasing coordinate order.
    ///
    /// Panics if `index` is out of range.
    pub fn for_each_nonzero(&self, index: usize, mut f: impl FnMut(usize, f64)) {
        let d = self.dim;
        match &self.kind {
            Kind::Explicit { atoms } => {
                let a = &atoms[index];
                for (&j, &v) in a.indices.iter().zip(&a.values) {
                    f(j, v);
                }
            }
            Kind::SignedBasis { radius } => {
                assert!(index < 2 * d, "atom index out of range");
                if index < d {
                    f(index, *radius);
                } else {
                    f(index - d, -radius);
                }
            }
            Kind::SimplexVertices => {
                assert!(index < d, "atom index out of range");
                f(index, 1.0);
            }
            Kind::HaarSigned { radius, basis } => {
                assert!(index < 2 * d, "atom index out of range");
                let (h, scale) = if index < d { (&basis[index], *radius) } else { (&basis[index - d], -radius) };
                for (&j, &v) in h.indices.iter().zip(&h.values) {
                    f(j, scale * v);
                }
            }
        }
    }

    /// Dense copy of atom `index`.
    pub fn atom(&self, index: usize) -> Result<Vec<f64>> {
        self.check_index(index)?;
        let mut out = vec![0.0; self.dim];
        self.for_each_nonzero(index, |j, v| out[j] = v);
        Ok(out)
    }

    /// `<a_index, v>`. Panics if `index` is out of range.
    pub fn dot(&self, index: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each_nonzero(index, |j, a| s += a * v[j]);
        s
    }

    /// `out += scale * a_index`.
    pub fn add_scaled(&self, index: usize, scale: f64, out: &mut [f64]) {
        self.for_each_nonzero(index, |j, a| out[j] += scale * a);
    }

    /// Index of `-a_index` for the symmetric families.
    pub fn negation(&self, index: usize) -> Option<usize> {
        match self.kind {
            Kind::SignedBasis { .. } | Kind::HaarSigned { .. } if index < 2 * self.dim => {
                Some((index + self.dim) % (2 * self.dim))
            }
            _ => None,
        }
    }

    /// Maximum pairwise l2 distance between atoms.
    pub fn diameter(&self) -> f64 {
        match &self.kind {
            Kind::SignedBasis { radius } | Kind::HaarSigned { radius, .. } => 2.0 * radius,
            Kind::SimplexVertices => std::f64::consts::SQRT_2,
            Kind::Explicit { .. } => {
                let dense: Vec<Vec<f64>> = (0..self.len()).map(|i| self.atom(i).unwrap()).collect();
                let mut best: f64 = 0.0;
                for i in 0..dense.len() {
                    for j in i + 1..dense.len() {
                        best = best.max(crate::l2_distance(&dense[i], &dense[j]));
                    }
                }
                best
            }
        }
    }

    /// Whether every atom lies on `{0, 1}^d`, as DICG requires.
    pub fn is_hypercube(&self) -> bool {
        match &self.kind {
            Kind::SimplexVertices => true,
            Kind::Explicit { atoms } => atoms.iter().all(|a| a.values.iter().all(|&v| v == 1.0)),
            _ => false,
        }
    }

    /// Atoms whose support lies inside `{j : iterate_j > SUPPORT_TOL}`.
    pub fn support_restricted(&self, iterate: &[f64]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let mut inside = true;
                self.for_each_nonzero(i, |j, _| inside &= iterate[j] > SUPPORT_TOL);
                inside
            })
            .collect()
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("radius must be positive and finite, got {radius}")))
    }
}

/// `argmin_a <a, g>` over all atoms, lowest index on ties.
pub fn lmo_exact(set: &AtomSet, g: &[f64]) -> Result<(usize, f64)> {
    check_dim(set.dim(), g.len())?;
    let mut best = (0, set.dot(0, g));
    for i in 1..set.len() {
        let v = set.dot(i, g);
        if v < best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

/// `argmax_{i in active} <a_i, g>`, lowest atom index on ties.
pub fn away_exact(set: &AtomSet, active: &[usize], g: &[f64]) -> Result<(usize, f64)> {
    check_dim(set.dim(), g.len())?;
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut best: Option<(usize, f64)> = None;
    for &i in active {
        set.check_index(i)?;
        let v = set.dot(i, g);
        best = match best {
            Some((bi, bv)) if bv > v || (bv == v && bi < i) => Some((bi, bv)),
            _ => Some((i, v)),
        };
    }
    Ok(best.unwrap())
}

/// Copy of `g` with coordinates outside the iterate's support set to `-inf`.
pub fn dicg_away_mask(g: &[f64], iterate: &[f64]) -> Result<Vec<f64>> {
    check_dim(g.len(), iterate.len())?;
    Ok(g.iter()
        .zip(iterate)
        .map(|(&gi, &xi)| if xi > SUPPORT_TOL { gi } else { f64::NEG_INFINITY })
        .collect())
}

/// DICG away atom: `argmax_a <masked, a>` with `(-inf) * 0 = 0`.
///
/// The published listing writes an argmin here, which contradicts the
/// `-inf` mask (it would always select a masked atom); the away step is an
/// argmax, and the mask restricts it to atoms supported inside the iterate.
pub fn dicg_away_exact(set: &AtomSet, masked: &[f64]) -> Result<(usize, f64)> {
    check_dim(set.dim(), masked.len())?;
    let mut best = (0, f64::NEG_INFINITY);
    let mut found = false;
    for i in 0..set.len() {
        let mut s = 0.0;
        set.for_each_nonzero(i, |j, a| s += a * masked[j]);
        if s.is_nan() {
            s = f64::NEG_INFINITY;
        }
        if !found || s > best.1 {
            best = (i, s);
            found = true;
        }
    }
    Ok(best)
}

/// Convex decomposition `beta = sum_i c_i a_i` with `c_i > 0`, `sum c_i = 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decomposition {
    weights: BTreeMap<usize, f64>,
}

impl Decomposition {
    pub fn vertex(index: usize) -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(index, 1.0);
        Decomposition { weights }
    }

    pub fn from_weights(weights: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, w) in weights {
            if !(w > 0.0) {
                return Err(Error::param(format!("weight for atom {i} must be positive, got {w}")));
            }
            *map.entry(i).or_insert(0.0) += w;
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::param(format!("weights must sum to 1, got {total}")));
        }
        Ok(Decomposition { weights: map })
    }

    pub fn weight(&self, index: usize) -> Option<f64> {
        self.weights.get(&index).copied()
    }

    pub fn active(&self) -> Vec<usize> {
        self.weights.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&i, &w)| (i, w))
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.values().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn reconstruct(&self, set: &AtomSet) -> Vec<f64> {
        let mut out = vec![0.0; set.dim()];
        for (&i, &w) in &self.weights {
            set.add_scaled(i, w, &mut out);
        }
        out
    }

    /// Moves `min(eta, c_away)` of mass from `away` to `fw` and returns the
    /// amount moved.
    ///
    /// When the away weight falls below [`DROP_TOL`] the atom is dropped and
    /// its residue goes to `fw` as well, so the weight sum is unchanged.
    pub fn pairwise_update(&mut self, fw: usize, away: usize, eta: f64) -> Result<f64> {
        if !(eta >= 0.0) {
            return Err(Error::param(format!("step size must be nonnegative, got {eta}")));
        }
        let c_away = *self.weights.get(&away).ok_or(Error::InactiveAtom(away))?;
        if eta == 0.0 {
            return Ok(0.0);
        }
        let mut moved = eta.min(c_away);
        let rest = c_away - moved;
        if rest < DROP_TOL {
            self.weights.remove(&away);
            moved = c_away;
        } else {
            self.weights.insert(away, rest);
        }
        *self.weights.entry(fw).or_insert(0.0) += moved;
        Ok(moved)
    }
}

/// DICG step: clamp `eta` to the largest feasible step along `direction`,
/// then round down to a power of two `2^-delta` (delta a natural number).
///
/// Returns 0 when `eta <= 0` or no positive feasible step exists.
pub fn dicg_step_size(eta: f64, iterate: &[f64], direction: &[f64]) -> Result<f64> {
    check_dim(iterate.len(), direction.len())?;
    if !(eta > 0.0) {
        return Ok(0.0);
    }
    let gamma_max = iterate
        .iter()
        .zip(direction)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| x.max(0.0) / -d)
        .fold(f64::INFINITY, f64::min);
    let capped = eta.min(gamma_max);
    if !(capped > 0.0) {
        return Ok(0.0);
    }
    let mut step = 1.0f64;
    while step > capped {
        step *= 0.5;
    }
    Ok(step)
}
