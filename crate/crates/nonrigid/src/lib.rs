pub mod affine_recovery;
pub mod epipolar;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod invariants;
pub mod linalg;
pub mod polymatch;
pub mod polyrecover;
pub mod simulation;
pub mod solver;

pub use error::{Error, Result};

/// Library version, recorded in report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
