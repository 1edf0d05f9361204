//! Numerical solvers: least squares, linear programming, group-sparse splitting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub mod lp;
pub mod lstsq;
pub mod splitting;

pub use lp::{solve_lp, LpMethod, LpOptions, LpProblem, LpSolution, LpStatus};
pub use lstsq::{least_squares_min_norm, PseudoInverse};
pub use splitting::{solve_group_lasso, GroupLassoOptions, GroupLassoSolution, GroupPartition, SplittingState, SplittingStatus};

/// One solver iteration, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
