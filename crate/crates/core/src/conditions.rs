//! Recoverability certificates: critical row sets, the attack-budget conditions, and the
//! two sufficient tests for exact recovery by ℓ1 minimization.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::hankel::{numerical_rank, select_rows, svd, HankelMatrix, IndexSet, RankTolerance};
use crate::optim::{solve_lp, LpOptions, LpProblem, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    Cond1,
    Cond2,
    Cond3,
    TNorm,
    Epigraph,
}

/// Outcome of a recoverability test. `holds = None` means the test could not decide
/// (search budget exhausted, or the epigraph test's kernel precondition failed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub condition: ConditionId,
    pub holds: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// 1-based row or channel indices of a violating set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_matrix: Option<Vec<Vec<f64>>>,
    pub budget_used: u64,
}

impl Certificate {
    fn new(condition: ConditionId, holds: Option<bool>, budget_used: u64) -> Self {
        Self { condition, holds, k: None, witness_indices: None, norm: None, optimum: None, t_matrix: None, budget_used }
    }

    pub fn holds(&self) -> bool {
        self.holds == Some(true)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    /// Cap on rank evaluations (subset searches) or vertices (epigraph test).
    pub budget: u64,
    pub rank_tol: RankTolerance,
    /// Strict-inequality margin for `‖T‖₁ < 1` and the epigraph optimum.
    pub delta_min: f64,
    pub lp: LpOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { budget: 1_000_000, rank_tol: RankTolerance::default(), delta_min: 1e-9, lp: LpOptions::default() }
    }
}

fn rank(m: &DMatrix<f64>, tol: &RankTolerance) -> Result<usize> {
    Ok(numerical_rank(m, tol)?.rank)
}

fn rank_without(m: &DMatrix<f64>, removed: &[usize], tol: &RankTolerance) -> Result<usize> {
    let keep: Vec<usize> = (0..m.nrows()).filter(|i| !removed.contains(i)).collect();
    rank(&select_rows(m, &keep), tol)
}

enum Search {
    Found(Vec<usize>),
    Exhausted,
    OverBudget { lower_bound: usize },
}

/// Smallest group set (0-based, lexicographic among equals) of size at most `max_size`
/// whose removal lowers the rank.
fn search_critical(
    m: &DMatrix<f64>,
    groups: &[Vec<usize>],
    max_size: usize,
    opts: &CertifyOptions,
    used: &mut u64,
) -> Result<Search> {
    let full = rank(m, &opts.rank_tol)?;
    for size in 1..=max_size.min(groups.len()) {
        for combo in (0..groups.len()).combinations(size) {
            if *used >= opts.budget {
                return Ok(Search::OverBudget { lower_bound: size });
            }
            *used += 1;
            let removed: Vec<usize> = combo.iter().flat_map(|&g| groups[g].iter().copied()).collect();
            if rank_without(m, &removed, &opts.rank_tol)? < full {
                return Ok(Search::Found(combo));
            }
        }
    }
    Ok(Search::Exhausted)
}

fn row_groups(rows: usize) -> Vec<Vec<usize>> {
    (0..rows).map(|i| vec![i]).collect()
}

fn channel_groups(q: usize, depth: usize) -> Vec<Vec<usize>> {
    (0..q).map(|i| (0..depth).map(|l| i + l * q).collect()).collect()
}

fn critical_set(m: &DMatrix<f64>, groups: &[Vec<usize>], opts: &CertifyOptions) -> Result<IndexSet> {
    if rank(m, &opts.rank_tol)? == 0 {
        return Err(contract("critical set of a zero matrix"));
    }
    let mut used = 0;
    match search_critical(m, groups, groups.len(), opts, &mut used)? {
        Search::Found(set) => IndexSet::from_zero_based(set, groups.len()),
        Search::OverBudget { lower_bound } => Err(Error::BudgetExceeded { budget: opts.budget, lower_bound }),
        Search::Exhausted => Err(Error::Numerical("removing every row did not lower the rank".into())),
    }
}

/// Smallest row set whose removal lowers the rank by one.
pub fn min_critical_row_set(m: &DMatrix<f64>, opts: &CertifyOptions) -> Result<IndexSet> {
    critical_set(m, &row_groups(m.nrows()), opts)
}

/// Rows `{i, i+q, …, i+(L−1)q}` for every channel `i` in `channels`.
pub fn periodical_set(channels: &IndexSet, q: usize, depth: usize) -> Result<IndexSet> {
    if channels.universe() > q {
        return Err(contract(format!("channel universe {} exceeds q = {q}", channels.universe())));
    }
    let rows = channels.indices().iter().flat_map(|&i| (0..depth).map(move |l| i + l * q)).collect();
    IndexSet::new(rows, q * depth)
}

/// Smallest channel set whose rows, once removed, lower the rank by one.
pub fn min_channel_critical_set(h: &HankelMatrix, opts: &CertifyOptions) -> Result<IndexSet> {
    critical_set(h.entries(), &channel_groups(h.q(), h.depth()), opts)
}

fn budget_condition(
    condition: ConditionId,
    m: &DMatrix<f64>,
    groups: &[Vec<usize>],
    k: usize,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let mut used = 0;
    let (holds, witness) = if k == 0 {
        (Some(true), None)
    } else {
        match search_critical(m, groups, 2 * k, opts, &mut used)? {
            Search::Found(set) => (Some(false), Some(set.iter().map(|i| i + 1).collect())),
            Search::Exhausted => (Some(true), None),
            Search::OverBudget { .. } => (None, None),
        }
    };
    let mut cert = Certificate::new(condition, holds, used);
    cert.k = Some(k);
    cert.witness_indices = witness;
    Ok(cert)
}

/// Every removal of `2k` rows keeps the rank.
pub fn check_condition1(h: &DMatrix<f64>, k: usize, opts: &CertifyOptions) -> Result<Certificate> {
    budget_condition(ConditionId::Cond1, h, &row_groups(h.nrows()), k, opts)
}

/// Every removal of `2k` channels keeps the rank.
pub fn check_condition2(h: &HankelMatrix, k: usize, opts: &CertifyOptions) -> Result<Certificate> {
    budget_condition(ConditionId::Cond2, h.entries(), &channel_groups(h.q(), h.depth()), k, opts)
}

/// Removing the attacked rows keeps the rank.
pub fn check_condition3(h: &DMatrix<f64>, attacked: &IndexSet, opts: &CertifyOptions) -> Result<Certificate> {
    if attacked.universe() > h.nrows() {
        return Err(contract(format!("row universe {} exceeds {} rows", attacked.universe(), h.nrows())));
    }
    let removed: Vec<usize> = attacked.zero_based().collect();
    let holds = rank_without(h, &removed, &opts.rank_tol)? == rank(h, &opts.rank_tol)?;
    let mut cert = Certificate::new(ConditionId::Cond3, Some(holds), 1);
    if !holds {
        cert.witness_indices = Some(attacked.indices().to_vec());
    }
    Ok(cert)
}

/// Appends zero rows up to `rows` so a thin SVD returns a full set of right singular vectors.
fn pad_rows(m: &DMatrix<f64>, rows: usize) -> DMatrix<f64> {
    if m.nrows() >= rows {
        return m.clone();
    }
    let mut out = DMatrix::zeros(rows, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

fn split_rows(h: &DMatrix<f64>, attacked: &IndexSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let f: Vec<usize> = attacked.zero_based().collect();
    let b: Vec<usize> = attacked.complement().zero_based().collect();
    (select_rows(h, &b), select_rows(h, &f))
}

/// Induced 1-norm: largest absolute column sum.
pub fn induced_one_norm(t: &DMatrix<f64>) -> f64 {
    t.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Minimal-`‖T‖₁` solution of `H_F = T H_B` (F = attacked rows, B = the rest).
pub fn min_t_matrix(h_b: &DMatrix<f64>, h_f: &DMatrix<f64>, opts: &CertifyOptions) -> Result<DMatrix<f64>> {
    let (nb, nf, cols) = (h_b.nrows(), h_f.nrows(), h_b.ncols());
    if h_f.ncols() != cols {
        return Err(contract("H_B and H_F need the same column count"));
    }
    if nf == 0 {
        return Ok(DMatrix::zeros(0, nb));
    }
    // variables: P (nf·nb), N (nf·nb), s; T = P − N, index (i, j) ↦ i·nb + j
    let nt = nf * nb;
    let nvar = 2 * nt + 1;
    let mut cost = DVector::zeros(nvar);
    cost[2 * nt] = 1.0;
    let mut a_eq = DMatrix::zeros(nf * cols, nvar);
    let mut b_eq = DVector::zeros(nf * cols);
    for i in 0..nf {
        for c in 0..cols {
            let row = i * cols + c;
            for j in 0..nb {
                a_eq[(row, i * nb + j)] = h_b[(j, c)];
                a_eq[(row, nt + i * nb + j)] = -h_b[(j, c)];
            }
            b_eq[row] = h_f[(i, c)];
        }
    }
    let mut a_ub = DMatrix::zeros(nb, nvar);
    for j in 0..nb {
        for i in 0..nf {
            a_ub[(j, i * nb + j)] = 1.0;
            a_ub[(j, nt + i * nb + j)] = 1.0;
        }
        a_ub[(j, 2 * nt)] = -1.0;
    }
    let p = LpProblem::new(cost).with_eq(a_eq, b_eq).with_ub(a_ub, DVector::zeros(nb));
    let sol = solve_lp(&p, &opts.lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Precondition("no T solves H_F = T H_B".into())),
        other => return Err(Error::Solver(format!("minimal-norm T problem ended with status {other:?}"))),
    }
    let t = DMatrix::from_fn(nf, nb, |i, j| sol.x[i * nb + j] - sol.x[nt + i * nb + j]);
    let resid = (&t * h_b - h_f).amax();
    if resid > 1e-7 * (1.0 + h_f.amax()) {
        return Err(Error::Numerical(format!("T H_B misses H_F by {resid:e}")));
    }
    Ok(t)
}

/// Sufficient test for ℓ1 recovery: some `T` with `H_F = T H_B` has `‖T‖₁ < 1`.
pub fn t_matrix_certificate(h: &DMatrix<f64>, attacked: &IndexSet, opts: &CertifyOptions) -> Result<Certificate> {
    if !check_condition3(h, attacked, opts)?.holds() {
        return Err(Error::Precondition("removing the attacked rows lowers the rank".into()));
    }
    let (h_b, h_f) = split_rows(h, attacked);
    let t = min_t_matrix(&h_b, &h_f, opts)?;
    let norm = induced_one_norm(&t);
    let mut cert = Certificate::new(ConditionId::TNorm, Some(norm < 1.0 - opts.delta_min), 1);
    cert.norm = Some(norm);
    cert.t_matrix = Some(t.row_iter().map(|r| r.iter().copied().collect()).collect());
    Ok(cert)
}

/// `max ‖H_F v‖₁` over `‖H_B v‖₁ = 1`, evaluated at every vertex of `{v : ‖H_B v‖₁ <= 1}`.
/// Holds when the optimum is below `1 − δ_min`, which gives `‖H_B v‖₁ > ‖H_F v‖₁` for all `v ≠ 0`.
pub fn epigraph_certificate(h_b: &DMatrix<f64>, h_f: &DMatrix<f64>, opts: &CertifyOptions) -> Result<Certificate> {
    if h_b.ncols() != h_f.ncols() {
        return Err(contract("H_B and H_F need the same column count"));
    }
    let cols = h_b.ncols();
    let indeterminate = |used| Ok(Certificate::new(ConditionId::Epigraph, None, used));
    if h_b.nrows() == 0 || cols == 0 {
        return indeterminate(0);
    }
    let factor = svd(&pad_rows(h_b, cols), false, true)?;
    let v_t = factor.v_t.as_ref().expect("right singular vectors requested");
    let smax = factor.singular_values.max();
    let threshold = opts.rank_tol.threshold(h_b.nrows(), cols, smax);
    let (range, kernel): (Vec<usize>, Vec<usize>) =
        (0..cols).partition(|&k| factor.singular_values[k] > threshold);
    let kernel_basis: Vec<DVector<f64>> = kernel.iter().map(|&k| v_t.row(k).transpose()).collect();
    let scale = 1.0 + h_f.amax() * (cols as f64).sqrt();
    if kernel_basis.iter().any(|k| (h_f * k).amax() > 1e-8 * scale) {
        return indeterminate(0);
    }
    let r = range.len();
    if r == 0 {
        let mut cert = Certificate::new(ConditionId::Epigraph, Some(true), 0);
        cert.optimum = Some(0.0);
        return Ok(cert);
    }
    let basis = DMatrix::from_fn(cols, r, |i, k| v_t[(range[k], i)]);
    let a = h_b * &basis;
    let f = h_f * &basis;

    let mut used = 0u64;
    let mut best = 0.0f64;
    for zeros in (0..a.nrows()).combinations(r - 1) {
        if used >= opts.budget {
            return indeterminate(used);
        }
        used += 1;
        let d = if r == 1 {
            DVector::from_element(1, 1.0)
        } else {
            let sub = svd(&pad_rows(&select_rows(&a, &zeros), r), false, true)?;
            let sv = &sub.singular_values;
            let order: Vec<usize> = (0..r).sorted_by(|&x, &y| sv[x].total_cmp(&sv[y])).collect();
            // need rank exactly r − 1 so the zero rows pin down a single direction
            if sv[order[1]] <= opts.rank_tol.threshold(r, r, sv[order[r - 1]]) {
                continue;
            }
            sub.v_t.expect("right singular vectors requested").row(order[0]).transpose()
        };
        let denom = (&a * &d).lp_norm(1);
        if denom <= 0.0 {
            continue;
        }
        best = best.max((&f * &d).lp_norm(1) / denom);
    }
    let mut cert = Certificate::new(ConditionId::Epigraph, Some(best < 1.0 - opts.delta_min), used);
    cert.optimum = Some(best);
    Ok(cert)
}

/// Epigraph test with `B`/`F` taken from an attacked row set of `h`.
pub fn epigraph_certificate_for(h: &DMatrix<f64>, attacked: &IndexSet, opts: &CertifyOptions) -> Result<Certificate> {
    let (h_b, h_f) = split_rows(h, attacked);
    epigraph_certificate(&h_b, &h_f, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::Trajectory;
    use approx::assert_relative_eq;

    fn opts() -> CertifyOptions {
        CertifyOptions::default()
    }

    #[test]
    fn identity_critical_set_is_first_row() {
        let s = min_critical_row_set(&DMatrix::identity(3, 3), &opts()).unwrap();
        assert_eq!(s.indices(), &[1]);
    }

    #[test]
    fn ones_column_needs_every_row() {
        let m = DMatrix::from_element(3, 1, 1.0);
        assert_eq!(min_critical_row_set(&m, &opts()).unwrap().indices(), &[1, 2, 3]);
        let c = check_condition1(&m, 1, &opts()).unwrap();
        assert_eq!(c.holds, Some(true));
        assert!(check_condition1(&m, 0, &opts()).unwrap().holds());
        assert!(min_critical_row_set(&DMatrix::zeros(2, 2), &opts()).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let m = DMatrix::from_element(6, 1, 1.0);
        let tight = CertifyOptions { budget: 3, ..opts() };
        assert!(matches!(min_critical_row_set(&m, &tight), Err(Error::BudgetExceeded { budget: 3, lower_bound: 1 })));
        let c = check_condition1(&m, 2, &tight).unwrap();
        assert_eq!(c.holds, None);
        assert_eq!(c.budget_used, 3);
    }

    #[test]
    fn periodical_sets() {
        let s = periodical_set(&IndexSet::new(vec![2], 3).unwrap(), 3, 2).unwrap();
        assert_eq!(s.indices(), &[2, 5]);
        assert_eq!(periodical_set(&IndexSet::full(3), 3, 2).unwrap(), IndexSet::full(6));
        assert!(periodical_set(&IndexSet::empty(3), 3, 2).unwrap().is_empty());
        assert!(periodical_set(&IndexSet::full(4), 3, 2).is_err());
    }

    #[test]
    fn channel_critical_sets() {
        let h = crate::hankel::build_hankel(&Trajectory::new(1, 0, vec![1.0, 2.0, 4.0, 8.0]).unwrap(), 2).unwrap();
        assert_eq!(min_channel_critical_set(&h, &opts()).unwrap().indices(), &[1]);
        // q = 2, L = 2 laid out as an identity
        let traj = Trajectory::new(2, 0, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let h = crate::hankel::build_hankel(&traj, 2).unwrap();
        assert_eq!(min_channel_critical_set(&h, &opts()).unwrap().len(), 1);
    }

    #[test]
    fn condition3_cases() {
        let eye = DMatrix::identity(3, 3);
        assert!(check_condition3(&eye, &IndexSet::empty(3), &opts()).unwrap().holds());
        let c = check_condition3(&eye, &IndexSet::new(vec![1], 3).unwrap(), &opts()).unwrap();
        assert_eq!(c.holds, Some(false));
        assert_eq!(c.witness_indices, Some(vec![1]));
    }

    #[test]
    fn t_norm_half_and_duplicate() {
        let h_b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let mut h = DMatrix::zeros(3, 2);
        h.rows_mut(0, 2).copy_from(&h_b);
        h.row_mut(2).copy_from(&(h_b.row(0) * 0.5));
        let attacked = IndexSet::new(vec![3], 3).unwrap();
        let c = t_matrix_certificate(&h, &attacked, &opts()).unwrap();
        assert_relative_eq!(c.norm.unwrap(), 0.5, epsilon = 1e-8);
        assert!(c.holds());

        h.row_mut(2).copy_from(&h_b.row(0));
        let c = t_matrix_certificate(&h, &attacked, &opts()).unwrap();
        assert_relative_eq!(c.norm.unwrap(), 1.0, epsilon = 1e-8);
        assert_eq!(c.holds, Some(false));

        assert!(matches!(
            t_matrix_certificate(&DMatrix::identity(3, 3), &attacked, &opts()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn epigraph_trivial_cases() {
        let h_b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = epigraph_certificate(&h_b, &DMatrix::zeros(1, 2), &opts()).unwrap();
        assert_eq!(c.optimum, Some(0.0));
        assert!(c.holds());
        let c = epigraph_certificate(&h_b, &h_b, &opts()).unwrap();
        assert_relative_eq!(c.optimum.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(c.holds, Some(false));
        // H_F sees a direction H_B does not
        let c = epigraph_certificate(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), &opts())
            .unwrap();
        assert_eq!(c.holds, None);
    }

    #[test]
    fn certificate_json_shape() {
        let c = check_condition3(&DMatrix::identity(2, 2), &IndexSet::new(vec![2], 2).unwrap(), &opts()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(v["condition"], "cond3");
        assert_eq!(v["holds"], false);
        assert_eq!(v["witness_indices"], serde_json::json!([2]));
        assert_eq!(v["budget_used"], 1);
    }
}
