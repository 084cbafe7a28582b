//! Device certification for QKD and numerical verification of composed security bounds.

pub mod qstate;
pub mod protocol;
pub mod seed;
pub mod devices;
pub mod certify;
pub mod compose;
pub mod suite;

/// Library version recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
