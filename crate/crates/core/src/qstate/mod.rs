//! Exact finite-dimensional states and channels.
//!
//! States are block diagonal in the joint value of their classical registers
//! (keys, flags, ciphertexts) and dense on their quantum registers. Only the
//! quantum part is ever stored as a dense matrix, so large classical alphabets
//! stay cheap.

mod channel;
pub mod linalg;
mod layout;
mod norm;
pub mod random;
mod state;

use thiserror::Error;

pub use channel::{Branch, ChannelDifference, KrausChannel};
pub use layout::{flatten, unflatten, Layout, Register, RegisterKind};
pub use norm::{
    diamond_norm_bounds, diamond_norm_upper_bound, induced_norm_lower_bound, trace_distance, DiamondBounds,
    DiamondOptions,
};
pub use state::DensityOperator;

/// Absolute tolerance for Hermiticity, trace, positivity and completeness checks.
pub const TOLERANCE: f64 = 1e-9;

/// Default cap on the dense (quantum) dimension handled by exact computations.
pub const DEFAULT_DIMENSION_CAP: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QStateError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error("unknown register {0}")]
    UnknownRegister(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("register {0} is not classical in this state (off-diagonal weight {1:e})")]
    NotClassical(String, f64),
    #[error("dimension {dim} exceeds the cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("diamond norm solver did not converge: lower {lower}, upper {upper} after {iterations} iterations")]
    NonConvergence { lower: f64, upper: f64, iterations: usize },
}
