//! Alternating-direction solver for `min Σᵢ ‖β_{Gᵢ}‖₂  s.t.  β = w − H g`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::hankel::RankTolerance;
use crate::optim::{PseudoInverse, TraceRow};

/// Disjoint groups covering `0..len` (0-based positions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
    len: usize,
}

impl GroupPartition {
    /// Channel groups of a stacked window: group `i` holds `i, i + q, …, i + (L−1) q`.
    pub fn channels(q: usize, depth: usize) -> Result<Self> {
        if q == 0 || depth == 0 {
            return Err(contract("channel partition needs q >= 1 and L >= 1"));
        }
        let groups = (0..q).map(|i| (0..depth).map(|l| i + l * q).collect()).collect();
        Ok(Self { groups, len: q * depth })
    }

    pub fn new(groups: Vec<Vec<usize>>, len: usize) -> Result<Self> {
        let mut seen = vec![false; len];
        for g in &groups {
            for &i in g {
                if i >= len || seen[i] {
                    return Err(contract(format!("position {i} repeated or outside 0..{len}")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(contract("groups do not cover every position"));
        }
        Ok(Self { groups, len })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn group_norms(&self, v: &DVector<f64>) -> Vec<f64> {
        self.groups.iter().map(|g| g.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt()).collect()
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        self.group_norms(v).iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupLassoOptions {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty is rescaled by this factor when one residual exceeds the other by `balance_ratio`.
    pub balance_factor: f64,
    pub balance_ratio: f64,
    /// Penalty stays fixed after this many iterations; endless rebalancing can stall convergence.
    pub balance_until: usize,
    pub rank_tol: RankTolerance,
    pub trace: bool,
}

impl Default for GroupLassoOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-8,
            max_iter: 10_000,
            balance_factor: 2.0,
            balance_ratio: 10.0,
            balance_until: 500,
            rank_tol: RankTolerance::default(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplittingStatus {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingState {
    pub g: DVector<f64>,
    pub beta: DVector<f64>,
    /// Scaled dual variable.
    pub u: DVector<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct GroupLassoSolution {
    pub state: SplittingState,
    pub status: SplittingStatus,
    /// `Σ ‖(w − H g)_{Gᵢ}‖₂` at the returned `g`.
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

fn group_shrink(v: &DVector<f64>, partition: &GroupPartition, thresh: f64) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for g in partition.groups() {
        let norm = g.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
        if norm > thresh {
            let s = 1.0 - thresh / norm;
            for &i in g {
                out[i] = s * v[i];
            }
        }
    }
    out
}

pub fn solve_group_lasso(
    h: &DMatrix<f64>,
    w: &DVector<f64>,
    partition: &GroupPartition,
    opts: &GroupLassoOptions,
) -> Result<GroupLassoSolution> {
    if h.nrows() != w.len() || partition.len() != w.len() {
        return Err(contract(format!(
            "H is {}x{}, w has {} entries, partition covers {}",
            h.nrows(),
            h.ncols(),
            w.len(),
            partition.len()
        )));
    }
    if !(opts.rho > 0.0) || !(opts.balance_factor > 1.0) {
        return Err(contract("penalty and balance factor must be positive (factor > 1)"));
    }
    let pinv = PseudoInverse::new(h, &opts.rank_tol)?;
    let scale = 1.0 + w.norm();
    let mut rho = opts.rho;
    let mut beta = DVector::zeros(w.len());
    let mut u = DVector::zeros(w.len());
    let mut g = pinv.solve(w);
    let mut hg = h * &g;
    let mut trace = Vec::new();
    let (mut pres, mut dres) = (f64::INFINITY, f64::INFINITY);

    for iter in 0..opts.max_iter {
        g = pinv.solve(&(w - &beta - &u));
        hg = h * &g;
        let beta_old = beta.clone();
        beta = group_shrink(&(w - &hg - &u), partition, 1.0 / rho);
        let r = &hg + &beta - w;
        u += &r;
        pres = r.norm();
        dres = rho * (h.transpose() * (&beta - &beta_old)).norm();
        if opts.trace {
            let objective = partition.objective(&(w - &hg));
            trace.push(TraceRow { iteration: iter, objective, primal_residual: pres, dual_residual: dres, gap: f64::NAN });
        }
        if pres <= opts.tol * scale && dres <= opts.tol * scale {
            let state = SplittingState { g, beta, u, rho, iterations: iter + 1, primal_residual: pres, dual_residual: dres };
            let objective = partition.objective(&(w - &hg));
            return Ok(GroupLassoSolution { state, status: SplittingStatus::Converged, objective, trace });
        }
        if iter >= opts.balance_until {
            continue;
        }
        if pres > opts.balance_ratio * dres {
            rho *= opts.balance_factor;
            u /= opts.balance_factor;
        } else if dres > opts.balance_ratio * pres {
            rho /= opts.balance_factor;
            u *= opts.balance_factor;
        }
    }
    let objective = partition.objective(&(w - &hg));
    let state = SplittingState { g, beta, u, rho, iterations: opts.max_iter, primal_residual: pres, dual_residual: dres };
    Ok(GroupLassoSolution { state, status: SplittingStatus::IterationCap, objective, trace })
}
