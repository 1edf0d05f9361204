//! Block-Hankel data matrices, numerical rank, and row restriction.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::lti::Trajectory;

/// Singular values above `max(floor, scale * max(rows, cols) * σ_max)` count towards the rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankTolerance {
    pub scale: f64,
    pub floor: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self { scale: f64::EPSILON, floor: 1e-10 }
    }
}

impl RankTolerance {
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        (self.scale * rows.max(cols) as f64 * sigma_max).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
}

/// SVD with nalgebra's default convergence threshold; a tighter one can stop on an inaccurate factorization.
pub fn svd(m: &DMatrix<f64>, compute_u: bool, compute_v: bool) -> Result<SVD<f64, Dyn, Dyn>> {
    SVD::try_new(m.clone(), compute_u, compute_v, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

pub fn numerical_rank(m: &DMatrix<f64>, tol: &RankTolerance) -> Result<RankInfo> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(RankInfo { rank: 0, singular_values: Vec::new(), threshold: tol.floor });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(contract("rank of a non-finite matrix"));
    }
    let svd = svd(m, false, false)?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let threshold = tol.threshold(m.nrows(), m.ncols(), sv[0]);
    let rank = sv.iter().take_while(|&&s| s > threshold).count();
    Ok(RankInfo { rank, singular_values: sv, threshold })
}

/// Sorted, duplicate-free 1-based positions within `1..=universe`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    universe: usize,
}

impl IndexSet {
    /// Sorts and deduplicates; rejects anything outside `1..=universe`.
    pub fn new(mut indices: Vec<usize>, universe: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i == 0 || i > universe) {
            return Err(contract(format!("index {bad} outside [1, {universe}]")));
        }
        Ok(Self { indices, universe })
    }

    pub fn empty(universe: usize) -> Self {
        Self { indices: Vec::new(), universe }
    }

    pub fn full(universe: usize) -> Self {
        Self { indices: (1..=universe).collect(), universe }
    }

    /// Builds from 0-based positions.
    pub fn from_zero_based(positions: impl IntoIterator<Item = usize>, universe: usize) -> Result<Self> {
        Self::new(positions.into_iter().map(|i| i + 1).collect(), universe)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|i| i - 1)
    }

    pub fn complement(&self) -> Self {
        let indices = (1..=self.universe).filter(|i| !self.contains(*i)).collect();
        Self { indices, universe: self.universe }
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        indices.sort_unstable();
        indices.dedup();
        Self { indices, universe: self.universe.max(other.universe) }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }
}

/// `H_L(w_d)`: block-row `r`, column `c` holds `w_d(r + c - 1)`.
#[derive(Debug, Clone)]
pub struct HankelMatrix {
    entries: DMatrix<f64>,
    q: usize,
    depth: usize,
    source_len: usize,
    factor: OnceLock<Factor>,
}

impl PartialEq for HankelMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.q == other.q && self.depth == other.depth && self.source_len == other.source_len
    }
}

/// SVD of the matrix padded with zero columns to at least square, so `u` spans the whole row space.
#[derive(Debug, Clone)]
struct Factor {
    u: DMatrix<f64>,
    sv: DVector<f64>,
    v_t: DMatrix<f64>,
}

/// Orthonormal bases of the numerical range and its orthogonal complement, and the map `G` with `H G = Q`.
#[derive(Debug, Clone)]
pub struct RangeBasis {
    pub basis: DMatrix<f64>,
    pub complement: DMatrix<f64>,
    pub coeff_map: DMatrix<f64>,
}

impl HankelMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Block rows `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Length `T` of the data it was built from.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.entries * g
    }

    fn factor(&self) -> Result<&Factor> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let (rows, cols) = self.entries.shape();
        let mut padded = DMatrix::zeros(rows, rows.max(cols));
        padded.columns_mut(0, cols).copy_from(&self.entries);
        let f = svd(&padded, true, true)?;
        let factor = Factor { u: f.u.unwrap(), sv: f.singular_values, v_t: f.v_t.unwrap() };
        Ok(self.factor.get_or_init(|| factor))
    }

    pub fn range_basis(&self, tol: &RankTolerance) -> Result<RangeBasis> {
        let f = self.factor()?;
        let (rows, cols) = self.entries.shape();
        let threshold = tol.threshold(rows, cols, f.sv.max());
        let (keep, drop): (Vec<usize>, Vec<usize>) = (0..f.sv.len()).partition(|&k| f.sv[k] > threshold);
        let basis = DMatrix::from_fn(rows, keep.len(), |i, k| f.u[(i, keep[k])]);
        let complement = DMatrix::from_fn(rows, drop.len(), |i, k| f.u[(i, drop[k])]);
        let coeff_map = DMatrix::from_fn(cols, keep.len(), |j, k| f.v_t[(keep[k], j)] / f.sv[keep[k]]);
        Ok(RangeBasis { basis, complement, coeff_map })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.entries.row_iter() {
            wtr.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn build_hankel(w_d: &Trajectory, depth: usize) -> Result<HankelMatrix> {
    let (q, t) = (w_d.q(), w_d.len());
    if depth == 0 || depth > t {
        return Err(contract(format!("block rows L = {depth} outside [1, {t}]")));
    }
    let cols = t - depth + 1;
    let data = w_d.data();
    let entries = DMatrix::from_fn(q * depth, cols, |row, col| data[col * q + row]);
    Ok(HankelMatrix { entries, q, depth, source_len: t, factor: OnceLock::new() })
}

/// Rows listed in `set`, in increasing order.
pub fn restrict_rows(m: &DMatrix<f64>, set: &IndexSet) -> Result<DMatrix<f64>> {
    if set.universe() > m.nrows() {
        return Err(contract(format!("index universe {} exceeds {} rows", set.universe(), m.nrows())));
    }
    let rows: Vec<usize> = set.zero_based().collect();
    Ok(select_rows(m, &rows))
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub(crate) fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpeReport {
    pub rank: usize,
    pub target: usize,
    /// `σ_target / σ_{target+1}`; `None` when `σ_{target+1}` does not exist (unbounded gap).
    pub gap_ratio: Option<f64>,
    pub holds: bool,
}

/// Generalized persistency of excitation: `rank H = m L + n`.
pub fn check_gpe(h: &HankelMatrix, m: usize, n: usize, tol: &RankTolerance) -> Result<GpeReport> {
    let target = m * h.depth() + n;
    if target > h.rows().min(h.cols()) {
        return Err(Error::InfeasibleTarget { target, rows: h.rows(), cols: h.cols() });
    }
    let info = numerical_rank(h.entries(), tol)?;
    let sv = &info.singular_values;
    let gap_ratio = match (target, sv.get(target)) {
        (0, _) => None,
        (_, None) => None,
        (t, Some(&next)) => Some(if next > 0.0 { sv[t - 1] / next } else { f64::INFINITY }).filter(|r| r.is_finite()),
    };
    Ok(GpeReport { rank: info.rank, target, gap_ratio, holds: info.rank == target })
}
