use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an input contract (dimensions, index ranges, parameter signs).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The persistency-of-excitation target exceeds what the matrix shape allows.
    #[error("rank target {target} can never be reached by a {rows}x{cols} matrix")]
    InfeasibleTarget { target: usize, rows: usize, cols: usize },

    /// Exhaustive search hit its evaluation cap before deciding.
    #[error("search budget of {budget} evaluations exceeded (best lower bound {lower_bound})")]
    BudgetExceeded { budget: u64, lower_bound: usize },

    /// An adversarial construction was requested where the recoverability condition holds.
    #[error("attack infeasible: {0}")]
    InfeasibleAttack(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => Error::Parse(format!("line {}: {}", pos.line(), e)),
            None => Error::Parse(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
