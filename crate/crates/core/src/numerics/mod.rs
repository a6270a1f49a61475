//! Dense real-matrix kernels sized for desk-scale control problems.
//!
//! Everything here is self-contained: Jacobi symmetric eigendecomposition,
//! Hessenberg + Francis QR for the spectral abscissa, Kronecker-vectorized
//! Sylvester solves, PSD square roots and equality-constrained least squares
//! by the null-space method.

mod eig;
mod lstsq;
mod lu;
mod matrix;
mod sylvester;

pub use eig::{eigenvalues, real_spectral_abscissa, spectral_norm, sym_eig, SymEigResult};
pub use lstsq::{
    constrained_lstsq, constrained_lstsq_with, pinv, solve_constrained, LstsqOptions, LstsqSolution,
    DEFAULT_RANK_TOL,
};
pub use lu::{inverse, lu_solve};
pub use matrix::{norm2, DenseMatrix};
pub use sylvester::{psd_sqrt, solve_lyapunov, solve_sylvester};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix dimensions must be positive")]
    EmptyShape,
    #[error("expected {rows}x{cols} = {} entries, got {got}", rows * cols)]
    EntryCount { rows: usize, cols: usize, got: usize },
    #[error("rows have unequal lengths (expected {expected}, got {got})")]
    RaggedRows { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("linear operator is singular or too ill-conditioned")]
    SingularOperator,
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("equality constraints are inconsistent (residual {residual:e})")]
    InconsistentConstraints { residual: f64 },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
}

pub(crate) fn require_square(a: &DenseMatrix) -> Result<usize, NumericsError> {
    if a.is_square() {
        Ok(a.rows())
    } else {
        Err(NumericsError::NonSquare { rows: a.rows(), cols: a.cols() })
    }
}
