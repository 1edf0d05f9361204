//! Trajectory recovery from a corrupted window: brute-force subset search and convex relaxations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::hankel::{HankelMatrix, IndexSet, RankTolerance};
use crate::lti::Trajectory;
use crate::optim::{GroupLassoOptions, LpOptions, PseudoInverse};

mod convex;
mod exact;

pub use convex::{recover_group_lasso, recover_l1, recover_noisy_channels, recover_noisy_entries};
pub use exact::{recover_adaptive, recover_channels_bruteforce, recover_entries_bruteforce};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Recovered,
    NoSolution,
    BudgetExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BruteforceEntries,
    BruteforceChannels,
    L1,
    GroupLasso,
    NoisyEntries,
    NoisyChannels,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::BruteforceEntries => "bruteforce_entries",
            Method::BruteforceChannels => "bruteforce_channels",
            Method::L1 => "l1",
            Method::GroupLasso => "group_lasso",
            Method::NoisyEntries => "noisy_entries",
            Method::NoisyChannels => "noisy_channels",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub method: Method,
    pub status: RecoveryStatus,
    pub w_tilde: Option<Vec<f64>>,
    pub g: Option<Vec<f64>>,
    /// Rows kept for the final fit (1-based).
    pub selected: Option<IndexSet>,
    /// Entries or channels judged corrupted (1-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<IndexSet>,
    /// `‖w|_selected − w̃|_selected‖₂`.
    pub residual: f64,
    pub subproblems_tried: u64,
    /// Attack budget at which the search succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_used: Option<usize>,
    /// `|w − w̃|` per entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_residuals: Option<Vec<f64>>,
    /// `‖(w − w̃)|_{channel i}‖₂` per channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_norms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_iterations: Option<usize>,
    pub wall_time: f64,
}

impl RecoveryResult {
    pub(crate) fn empty(method: Method, status: RecoveryStatus) -> Self {
        Self {
            method,
            status,
            w_tilde: None,
            g: None,
            selected: None,
            removed: None,
            residual: f64::NAN,
            subproblems_tried: 0,
            k_used: None,
            entry_residuals: None,
            group_norms: None,
            objective: None,
            duality_gap: None,
            solver_iterations: None,
            wall_time: 0.0,
        }
    }

    pub fn is_recovered(&self) -> bool {
        self.status == RecoveryStatus::Recovered
    }

    pub fn w_tilde_vector(&self) -> Option<DVector<f64>> {
        self.w_tilde.as_ref().map(|w| DVector::from_column_slice(w))
    }

    /// Recovered window as a trajectory with the layout of `like`.
    pub fn trajectory(&self, like: &Trajectory) -> Option<Result<Trajectory>> {
        self.w_tilde.as_ref().map(|w| Trajectory::new(like.q(), like.inputs(), w.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverOptions {
    /// A subset is consistent when its least-squares residual is at most `consistency_tol·(1 + ‖w_I‖₂)`.
    pub consistency_tol: f64,
    pub rank_tol: RankTolerance,
    /// Cap on brute-force subproblems.
    pub budget: u64,
    pub lp: LpOptions,
    pub splitting: GroupLassoOptions,
    /// Residuals below `polish_tol·(1 + ‖w‖∞)` count as exact fits when polishing convex solutions.
    pub polish_tol: f64,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            consistency_tol: 1e-8,
            rank_tol: RankTolerance::default(),
            budget: 1_000_000,
            lp: LpOptions::default(),
            splitting: GroupLassoOptions::default(),
            polish_tol: 1e-6,
        }
    }
}

/// Minimum-norm `g` with `H_I g = w_I` when the restricted system is consistent.
pub fn consistent_solve(h_i: &DMatrix<f64>, w_i: &DVector<f64>, tol: f64, rank_tol: &RankTolerance) -> Result<Option<DVector<f64>>> {
    if h_i.nrows() != w_i.len() {
        return Err(contract(format!("H_I has {} rows but w_I has {} entries", h_i.nrows(), w_i.len())));
    }
    let g = PseudoInverse::new(h_i, rank_tol)?.solve(w_i);
    let residual = (h_i * &g - w_i).norm();
    Ok((residual <= tol * (1.0 + w_i.norm())).then_some(g))
}

pub(crate) fn check_window(h: &HankelMatrix, w: &Trajectory) -> Result<DVector<f64>> {
    if w.q() != h.q() || w.len() != h.depth() {
        return Err(contract(format!(
            "window is {}x{} (q x L) but H expects {}x{}",
            w.q(),
            w.len(),
            h.q(),
            h.depth()
        )));
    }
    Ok(w.stacked())
}

pub(crate) fn channel_norms(r: &DVector<f64>, q: usize) -> Vec<f64> {
    let mut norms = vec![0.0; q];
    for (i, v) in r.iter().enumerate() {
        norms[i % q] += v * v;
    }
    norms.iter().map(|s| s.sqrt()).collect()
}

/// Fills the fields shared by every successful recovery.
pub(crate) fn recovered(
    method: Method,
    h: &DMatrix<f64>,
    w: &DVector<f64>,
    q: usize,
    g: DVector<f64>,
    selected: IndexSet,
) -> RecoveryResult {
    let w_tilde = h * &g;
    let diff = w - &w_tilde;
    let residual = selected.zero_based().map(|i| diff[i] * diff[i]).sum::<f64>().sqrt();
    let mut out = RecoveryResult::empty(method, RecoveryStatus::Recovered);
    out.entry_residuals = Some(diff.iter().map(|v| v.abs()).collect());
    out.group_norms = Some(channel_norms(&diff, q));
    out.w_tilde = Some(w_tilde.iter().copied().collect());
    out.g = Some(g.iter().copied().collect());
    out.selected = Some(selected);
    out.residual = residual;
    out
}
