//! Secure trajectory reconstruction for unknown linear time-invariant systems from
//! attack-free offline data and a possibly corrupted online window.
// Negated float comparisons are how NaN parameters get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod attack;
pub mod conditions;
pub mod error;
pub mod hankel;
pub mod lti;
pub mod optim;
pub mod recover;
pub mod rng;

pub use error::{Error, Result};
