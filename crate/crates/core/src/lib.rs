//! Structured interior-point solver for constrained finite-horizon
//! linear-quadratic optimal control of chain-coupled subsystem networks.
//!
//! A problem instance couples `N` subsystems along a path graph: subsystem `j`
//! interacts only with its neighbours `j - 1` and `j + 1`, over a horizon of
//! `T` steps, subject to per-stage linear inequality constraints. The solver
//! computes primal-dual Newton steps by
//!
//! 1. assembling the linearized KKT system, which is block tri-diagonal
//!    across subsystems ([`kkt::assemble_full`]),
//! 2. eliminating slack, inequality-multiplier, and input blocks to obtain a
//!    smaller symmetric block tri-diagonal system in the state/costate
//!    directions ([`kkt::reduce`]),
//! 3. solving the squared (positive-definite) form of that system with
//!    conjugate gradients, preconditioned by a fixed number of block Jacobi
//!    sweeps over subsystem pairs ([`precond`], [`krylov`]), and
//! 4. recovering the eliminated direction components ([`kkt::recover`]).
//!
//! Every preconditioner application factors into `ceil(N/2)` independent
//! block tri-diagonal solves in the time direction, so the cost per CG
//! iteration grows linearly in both `N` and `T`.
//!
//! [`problem`] defines instances and a mass-spring-damper chain generator,
//! [`ipm`] runs the outer interior-point loop, [`oracle`] holds dense
//! reference computations used by tests and diagnostics, and [`blocktri`] is
//! the shared block tri-diagonal container.

pub mod blocktri;
pub mod dense;
pub mod ipm;
pub mod kkt;
pub mod krylov;
pub mod oracle;
pub mod precond;
pub mod problem;

use thiserror::Error;

/// Errors shared across the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dense export of dimension {dim} exceeds the guard {guard}")]
    SizeGuard { dim: usize, guard: usize },

    #[error("singular pivot in block {block} (rcond estimate {rcond:.3e})")]
    SingularPivot { block: usize, rcond: f64 },

    #[error("matrix is singular to working precision (pivot {pivot:.3e} at column {step})")]
    Singular { step: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at column {step})")]
    NotPositiveDefinite { step: usize, pivot: f64 },

    #[error("iterate is not strictly interior: {0}")]
    NonInterior(String),

    #[error("input-block Schur complement is singular at (j={j}, t={t})")]
    SingularInputBlock { j: usize, t: usize },

    #[error("conjugate gradient breakdown at iteration {iteration}: curvature {denominator:.3e}")]
    Breakdown { iteration: usize, denominator: f64 },

    #[error("power iteration did not converge within the iteration budget")]
    PowerIterationDiverged,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
