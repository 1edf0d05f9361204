use std::time::Instant;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Error, Result};
use crate::hankel::{select_entries, select_rows, HankelMatrix, IndexSet, RangeBasis};
use crate::lti::Trajectory;
use crate::optim::{solve_group_lasso, solve_lp, GroupPartition, LpProblem, LpStatus, PseudoInverse, SplittingStatus};

use super::{channel_norms, check_window, recovered, Method, RecoverOptions, RecoveryResult, RecoveryStatus};

/// Least-absolute-deviation fit `w* = argmin ‖w − v‖₁` over `v ∈ range(H)`.
struct LadFit {
    g: DVector<f64>,
    /// Sign certificate from the dual problem.
    y: DVector<f64>,
    iterations: usize,
    range: RangeBasis,
}

fn lad_fit(h: &HankelMatrix, w: &DVector<f64>, opts: &RecoverOptions) -> Result<LadFit> {
    let rows = h.rows();
    let range = h.range_basis(&opts.rank_tol)?;
    let n = &range.complement;
    if n.ncols() == 0 {
        let g = &range.coeff_map * (range.basis.transpose() * w);
        return Ok(LadFit { g, y: DVector::zeros(rows), iterations: 0, range });
    }

    // the residual r = w − H g is exactly the set Nᵀ r = Nᵀ w for an orthonormal
    // complement N of range(H):  min ‖r‖₁  s.t.  Nᵀ r = Nᵀ w,  with r = r⁺ − r⁻
    let nt = n.transpose();
    let mut a_eq = DMatrix::zeros(n.ncols(), 2 * rows);
    a_eq.columns_mut(0, rows).copy_from(&nt);
    a_eq.columns_mut(rows, rows).copy_from(&(-&nt));
    let p = LpProblem::new(DVector::from_element(2 * rows, 1.0)).with_eq(a_eq, &nt * w);
    let sol = solve_lp(&p, &opts.lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!(
            "least-absolute-deviation problem ended with status {:?} after {} iterations",
            sol.status, sol.iterations
        )));
    }
    let r = sol.x.rows(0, rows) - sol.x.rows(rows, rows);
    let fitted = w - r;
    let g = &range.coeff_map * (range.basis.transpose() * fitted);
    // dual feasible sign vector: ‖y‖∞ <= 1 and y ⟂ range(H)
    let y = n * &sol.dual_eq;
    Ok(LadFit { g, y, iterations: sol.iterations, range })
}

/// Least squares on `rows` through the orthonormal range basis; `None` when those rows lose rank.
fn range_refit(range: &RangeBasis, w: &DVector<f64>, rows: &[usize]) -> Option<DVector<f64>> {
    let q_z = select_rows(&range.basis, rows);
    let gram = q_z.transpose() * &q_z;
    let chol = gram.cholesky()?;
    let min_pivot = chol.l_dirty().diagonal().min();
    // the Gram matrix is I − (dropped rows)ᵀ(dropped rows), so its pivots are at most 1
    if min_pivot < 1e-6 {
        return None;
    }
    let c = chol.solve(&(q_z.transpose() * select_entries(w, rows)));
    Some(&range.coeff_map * c)
}

/// Refits on the rows that are already matched, keeping the result only if the objective does not rise.
fn polish<F>(
    h: &DMatrix<f64>,
    range: Option<&RangeBasis>,
    w: &DVector<f64>,
    g: DVector<f64>,
    exact_rows: Vec<usize>,
    objective: F,
    opts: &RecoverOptions,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if exact_rows.is_empty() {
        return Ok(g);
    }
    let candidate = match range.and_then(|r| range_refit(r, w, &exact_rows)) {
        Some(c) => c,
        None => PseudoInverse::new(&select_rows(h, &exact_rows), &opts.rank_tol)?.solve(&select_entries(w, &exact_rows)),
    };
    let before = objective(&(w - h * &g));
    let after = objective(&(w - h * &candidate));
    Ok(if after <= before + 1e-12 * (1.0 + w.amax()) { candidate } else { g })
}

fn exact_threshold(w: &DVector<f64>, opts: &RecoverOptions) -> f64 {
    opts.polish_tol * (1.0 + w.amax())
}

/// `g* = argmin ‖w − H g‖₁`, `w* = H g*`.
pub fn recover_l1(h: &HankelMatrix, w: &Trajectory, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let start = Instant::now();
    let wv = check_window(h, w)?;
    let m = h.entries();
    let fit = lad_fit(h, &wv, opts)?;
    let tau = exact_threshold(&wv, opts);
    let resid = &wv - m * &fit.g;
    let exact: Vec<usize> = (0..wv.len()).filter(|&i| resid[i].abs() <= tau).collect();
    let g = polish(m, Some(&fit.range), &wv, fit.g, exact, |r| r.lp_norm(1), opts)?;
    let resid = &wv - m * &g;
    let kept: Vec<usize> = (0..wv.len()).filter(|&i| resid[i].abs() <= tau).collect();
    let dropped: Vec<usize> = (0..wv.len()).filter(|&i| resid[i].abs() > tau).collect();
    let objective = resid.lp_norm(1);
    let mut out = recovered(Method::L1, m, &wv, h.q(), g, IndexSet::from_zero_based(kept, wv.len())?);
    out.removed = Some(IndexSet::from_zero_based(dropped, wv.len())?);
    out.objective = Some(objective);
    out.duality_gap = Some(objective - wv.dot(&fit.y));
    out.solver_iterations = Some(fit.iterations);
    out.subproblems_tried = 1;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

/// With `strict` off, an iterate stopped at the cap is still used (the noisy variant only ranks channels by it).
fn group_fit(h: &HankelMatrix, wv: &DVector<f64>, opts: &RecoverOptions, strict: bool) -> Result<(DVector<f64>, usize)> {
    let m = h.entries();
    let partition = GroupPartition::channels(h.q(), h.depth())?;
    let sol = solve_group_lasso(m, wv, &partition, &opts.splitting)?;
    if sol.status != SplittingStatus::Converged {
        let msg = format!(
            "group problem hit the iteration cap ({}) with residuals primal {:e}, dual {:e}",
            sol.state.iterations, sol.state.primal_residual, sol.state.dual_residual
        );
        if strict {
            return Err(Error::Solver(msg));
        }
        log::warn!("{msg}; ranking channels with the last iterate");
    }
    let tau = exact_threshold(wv, opts) * (h.depth() as f64).sqrt();
    let norms = channel_norms(&(wv - m * &sol.state.g), h.q());
    let exact: Vec<usize> = partition
        .groups()
        .iter()
        .zip(&norms)
        .filter(|(_, n)| **n <= tau)
        .flat_map(|(g, _)| g.iter().copied())
        .sorted_unstable()
        .collect();
    let g = polish(m, None, wv, sol.state.g, exact, |r| partition.objective(r), opts)?;
    Ok((g, sol.state.iterations))
}

/// `min Σᵢ ‖β|_{channel i}‖₂` subject to `β = w − H g`.
pub fn recover_group_lasso(h: &HankelMatrix, w: &Trajectory, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let start = Instant::now();
    let wv = check_window(h, w)?;
    let m = h.entries();
    let (g, iterations) = group_fit(h, &wv, opts, true)?;
    let q = h.q();
    let norms = channel_norms(&(&wv - m * &g), q);
    let tau = exact_threshold(&wv, opts) * (h.depth() as f64).sqrt();
    let bad: Vec<usize> = (0..q).filter(|&i| norms[i] > tau).collect();
    let bad_rows: Vec<usize> = (0..wv.len()).filter(|r| bad.contains(&(r % q))).collect();
    let kept: Vec<usize> = (0..wv.len()).filter(|r| !bad_rows.contains(r)).collect();
    let mut out = recovered(Method::GroupLasso, m, &wv, q, g, IndexSet::from_zero_based(kept, wv.len())?);
    out.objective = Some(norms.iter().sum());
    out.removed = Some(IndexSet::from_zero_based(bad, q)?);
    out.solver_iterations = Some(iterations);
    out.subproblems_tried = 1;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Indices of the `k` largest scores; ties go to the smaller index.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = order.into_iter().take(k).collect();
    top.sort_unstable();
    top
}

fn refit(
    method: Method,
    h: &HankelMatrix,
    wv: &DVector<f64>,
    removed_rows: &[usize],
    removed: IndexSet,
    opts: &RecoverOptions,
) -> Result<RecoveryResult> {
    let m = h.entries();
    let kept: Vec<usize> = (0..wv.len()).filter(|r| !removed_rows.contains(r)).collect();
    let rank = h.range_basis(&opts.rank_tol)?.basis.ncols();
    if kept.len() < rank {
        let mut out = RecoveryResult::empty(method, RecoveryStatus::NoSolution);
        out.removed = Some(removed);
        return Ok(out);
    }
    let g = PseudoInverse::new(&select_rows(m, &kept), &opts.rank_tol)?.solve(&select_entries(wv, &kept));
    let mut out = recovered(method, m, wv, h.q(), g, IndexSet::from_zero_based(kept, wv.len())?);
    out.removed = Some(removed);
    Ok(out)
}

/// ℓ1 fit, drop the `k` entries with the largest residuals, least squares on the rest.
pub fn recover_noisy_entries(h: &HankelMatrix, w: &Trajectory, k: usize, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let start = Instant::now();
    let wv = check_window(h, w)?;
    if k > wv.len() {
        return Err(contract(format!("k = {k} exceeds qL = {}", wv.len())));
    }
    let m = h.entries();
    let fit = lad_fit(h, &wv, opts)?;
    let resid: Vec<f64> = (&wv - m * &fit.g).iter().map(|v| v.abs()).collect();
    let dropped = top_k(&resid, k);
    let removed = IndexSet::from_zero_based(dropped.clone(), wv.len())?;
    let mut out = refit(Method::NoisyEntries, h, &wv, &dropped, removed, opts)?;
    out.objective = Some(resid.iter().sum());
    out.solver_iterations = Some(fit.iterations);
    out.subproblems_tried = 1;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Group fit, drop the `k` channels with the largest residual norms, least squares on the rest.
pub fn recover_noisy_channels(h: &HankelMatrix, w: &Trajectory, k: usize, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let start = Instant::now();
    let wv = check_window(h, w)?;
    let q = h.q();
    if k > q {
        return Err(contract(format!("k = {k} exceeds q = {q}")));
    }
    let m = h.entries();
    let (g, iterations) = group_fit(h, &wv, opts, false)?;
    let norms = channel_norms(&(&wv - m * &g), q);
    let dropped = top_k(&norms, k);
    let rows: Vec<usize> = (0..wv.len()).filter(|r| dropped.contains(&(r % q))).collect();
    let removed = IndexSet::from_zero_based(dropped, q)?;
    let mut out = refit(Method::NoisyChannels, h, &wv, &rows, removed, opts)?;
    out.objective = Some(norms.iter().sum());
    out.solver_iterations = Some(iterations);
    out.subproblems_tried = 1;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::build_hankel;

    fn data() -> (HankelMatrix, Trajectory) {
        let wd = Trajectory::new(1, 0, (0..10).map(|t| 0.9f64.powi(t)).collect()).unwrap();
        let h = build_hankel(&wd, 5).unwrap();
        let w = Trajectory::new(1, 0, (0..5).map(|t| 2.0 * 0.9f64.powi(t)).collect()).unwrap();
        (h, w)
    }

    #[test]
    fn clean_window_has_zero_objective() {
        let (h, w) = data();
        let out = recover_l1(&h, &w, &RecoverOptions::default()).unwrap();
        assert!(out.objective.unwrap() < 1e-12);
        for (a, b) in out.w_tilde.unwrap().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let out = recover_group_lasso(&h, &w, &RecoverOptions::default()).unwrap();
        assert!(out.group_norms.unwrap().iter().all(|n| *n < 1e-9));
    }

    #[test]
    fn l1_removes_a_single_outlier() {
        let (h, w) = data();
        let mut bad = w.data().to_vec();
        bad[1] += 3.0;
        let bad = Trajectory::new(1, 0, bad).unwrap();
        let out = recover_l1(&h, &bad, &RecoverOptions::default()).unwrap();
        for (a, b) in out.w_tilde.as_ref().unwrap().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(out.removed.unwrap().indices(), &[2]);
        assert!(out.duality_gap.unwrap().abs() < 1e-8);
        let noisy = recover_noisy_entries(&h, &bad, 1, &RecoverOptions::default()).unwrap();
        assert_eq!(noisy.removed.unwrap().indices(), &[2]);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[1.0, 3.0, 3.0, 0.5], 1), vec![1]);
        assert_eq!(top_k(&[2.0, 2.0, 2.0], 2), vec![0, 1]);
        assert!(top_k(&[1.0], 0).is_empty());
    }

    #[test]
    fn dropping_the_only_channel_leaves_nothing() {
        let (h, w) = data();
        let out = recover_noisy_channels(&h, &w, 1, &RecoverOptions::default()).unwrap();
        assert_eq!(out.status, RecoveryStatus::NoSolution);
    }
}
