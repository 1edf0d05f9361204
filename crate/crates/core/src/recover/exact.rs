use std::time::Instant;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::attack::AttackKind;
use crate::error::{contract, Result};
use crate::hankel::{select_entries, select_rows, HankelMatrix, IndexSet};
use crate::lti::Trajectory;

use super::{check_window, consistent_solve, recovered, Method, RecoverOptions, RecoveryResult, RecoveryStatus};

/// Drops each combination of `k` groups in lexicographic order and returns the first consistent fit.
fn bruteforce(
    method: Method,
    h: &HankelMatrix,
    w: &DVector<f64>,
    groups: &[Vec<usize>],
    k: usize,
    opts: &RecoverOptions,
) -> Result<RecoveryResult> {
    let start = Instant::now();
    let m = h.entries();
    let rows = m.nrows();
    let mut tried = 0u64;
    let mut removed_rows = vec![false; rows];
    for combo in (0..groups.len()).combinations(k) {
        if tried >= opts.budget {
            let mut out = RecoveryResult::empty(method, RecoveryStatus::BudgetExceeded);
            out.subproblems_tried = tried;
            out.wall_time = start.elapsed().as_secs_f64();
            return Ok(out);
        }
        tried += 1;
        removed_rows.iter_mut().for_each(|r| *r = false);
        for &g in &combo {
            for &r in &groups[g] {
                removed_rows[r] = true;
            }
        }
        let kept: Vec<usize> = (0..rows).filter(|&r| !removed_rows[r]).collect();
        let h_i: DMatrix<f64> = select_rows(m, &kept);
        let w_i = select_entries(w, &kept);
        if let Some(g) = consistent_solve(&h_i, &w_i, opts.consistency_tol, &opts.rank_tol)? {
            let selected = IndexSet::from_zero_based(kept, rows)?;
            let mut out = recovered(method, m, w, h.q(), g, selected);
            out.removed = Some(IndexSet::from_zero_based(combo, groups.len())?);
            out.subproblems_tried = tried;
            out.k_used = Some(k);
            out.wall_time = start.elapsed().as_secs_f64();
            return Ok(out);
        }
    }
    let mut out = RecoveryResult::empty(method, RecoveryStatus::NoSolution);
    out.subproblems_tried = tried;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Searches every way of discarding `k` entries.
pub fn recover_entries_bruteforce(h: &HankelMatrix, w: &Trajectory, k: usize, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let wv = check_window(h, w)?;
    if k > wv.len() {
        return Err(contract(format!("k = {k} exceeds qL = {}", wv.len())));
    }
    let groups: Vec<Vec<usize>> = (0..wv.len()).map(|i| vec![i]).collect();
    bruteforce(Method::BruteforceEntries, h, &wv, &groups, k, opts)
}

/// Searches every way of discarding `k` whole channels.
pub fn recover_channels_bruteforce(h: &HankelMatrix, w: &Trajectory, k: usize, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let wv = check_window(h, w)?;
    let (q, depth) = (h.q(), h.depth());
    if k > q {
        return Err(contract(format!("k = {k} exceeds q = {q}")));
    }
    let groups: Vec<Vec<usize>> = (0..q).map(|i| (0..depth).map(|l| i + l * q).collect()).collect();
    bruteforce(Method::BruteforceChannels, h, &wv, &groups, k, opts)
}

/// Raises the assumed attack count from 0 until a consistent subset appears.
pub fn recover_adaptive(
    h: &HankelMatrix,
    w: &Trajectory,
    k_max: usize,
    kind: AttackKind,
    opts: &RecoverOptions,
) -> Result<RecoveryResult> {
    let start = Instant::now();
    let mut tried = 0;
    let mut last = None;
    for k in 0..=k_max {
        let out = match kind {
            AttackKind::Entry => recover_entries_bruteforce(h, w, k, opts)?,
            AttackKind::Channel => recover_channels_bruteforce(h, w, k, opts)?,
        };
        tried += out.subproblems_tried;
        if out.status != RecoveryStatus::NoSolution {
            let mut out = out;
            out.subproblems_tried = tried;
            out.wall_time = start.elapsed().as_secs_f64();
            return Ok(out);
        }
        last = Some(out);
    }
    let mut out = last.unwrap_or_else(|| RecoveryResult::empty(Method::BruteforceEntries, RecoveryStatus::NoSolution));
    out.subproblems_tried = tried;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}
