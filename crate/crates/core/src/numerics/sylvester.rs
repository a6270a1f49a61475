use super::{lu_solve, require_square, sym_eig, DenseMatrix, NumericsError};

/// Solves F·X + X·G = W.
///
/// The operator is vectorized as (I ⊗ F + Gᵀ ⊗ I)·vec(X), which is fine for
/// the handful of states involved here. The result is rejected as
/// `SingularOperator` when the LU pivots collapse or when the residual
/// exceeds `1e-8·(‖F‖‖X‖ + ‖X‖‖G‖ + ‖W‖)` in Frobenius norm.
pub fn solve_sylvester(f: &DenseMatrix, g: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    let n = require_square(f)?;
    let k = require_square(g)?;
    if w.shape() != (n, k) {
        return Err(NumericsError::ShapeMismatch { op: "solve_sylvester", left: (n, k), right: w.shape() });
    }
    let op = &DenseMatrix::identity(k).kron(f) + &g.transpose().kron(&DenseMatrix::identity(n));
    let rhs = DenseMatrix::column(&w.vec());
    let sol = lu_solve(&op, &rhs)?;
    let x = DenseMatrix::unvec(sol.as_slice(), n, k);

    let residual = (&(&(f * &x) + &(&x * g)) - w).frobenius_norm();
    let xn = x.frobenius_norm();
    let bound = 1e-8 * (f.frobenius_norm() * xn + xn * g.frobenius_norm() + w.frobenius_norm());
    if !(residual <= bound) {
        return Err(NumericsError::SingularOperator);
    }
    Ok(x)
}

/// Solves Aᵀ·X + X·A = Q and returns the symmetric part of the solution.
pub fn solve_lyapunov(a: &DenseMatrix, q: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    Ok(solve_sylvester(&a.transpose(), a, q)?.symmetrized())
}

/// Symmetric PSD square root. Eigenvalues down to `-1e-10·λ_max` are
/// clamped to zero; anything more negative is `NotPsd`.
pub fn psd_sqrt(m: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    let eig = sym_eig(m)?;
    let floor = -1e-10 * eig.max().abs();
    if eig.min() < floor {
        return Err(NumericsError::NotPsd { min_eigenvalue: eig.min() });
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()).symmetrized())
}
