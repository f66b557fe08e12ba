//! Error type shared by every module of the toolkit.
//!
//! The variants separate configuration mistakes (bad domain parameters,
//! impossible eigenpair counts, oversized dense problems) from runtime
//! conditions detected while solving (unsafe spectral shifts, rank
//! collapse, broken symmetry contracts), so a caller can decide whether a
//! failure is fixable by changing the input.

use thiserror::Error;

/// Unified error type for mesh construction, assembly, linear algebra and
/// the outer eigensolver.
#[derive(Debug, Error)]
pub enum Error {
    /// The requested configuration is invalid or structurally impossible.
    #[error("configuration error: {0}")]
    Config(String),

    /// A shifted operator turned out not to be positive definite for the
    /// component named here (a subdomain index or "coarse").
    #[error("shift safety violated in {component}: shift {shift} makes the operator indefinite")]
    ShiftSafety { component: String, shift: f64 },

    /// The conjugate-gradient positivity guard observed a non-positive
    /// curvature p'Ap; the operator is not positive definite.
    #[error("indefinite operator detected: curvature {curvature:e}")]
    Indefinite { curvature: f64 },

    /// A Cholesky pivot was non-positive: the matrix is not symmetric
    /// positive definite where the algorithm requires it.
    #[error("matrix not positive definite: {0}")]
    NotSpd(String),

    /// An input violated a documented numerical contract (for example an
    /// asymmetric matrix passed to the symmetric eigensolver).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A basis lost rank: fewer independent vectors survived than the
    /// operation needs.
    #[error("degenerate basis: {0}")]
    Degeneracy(String),

    /// Operand dimensions do not match.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Two meshes passed as a coarse/fine pair are not nested.
    #[error("meshes are not nested: {0}")]
    NonNested(String),

    /// File output failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
