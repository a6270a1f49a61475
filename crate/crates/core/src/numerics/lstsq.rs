use super::{sym_eig, DenseMatrix, NumericsError};

/// Gram-eigenvalue cutoff relative to the largest Gram eigenvalue.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct LstsqOptions {
    /// Gram eigenvalues below `rank_tol·λ_max` count as zero.
    pub rank_tol: f64,
    /// Equality residual accepted as consistent, relative to ‖rhs‖ + ‖A‖‖x‖.
    pub consistency_tol: f64,
}

impl Default for LstsqOptions {
    fn default() -> Self {
        Self { rank_tol: DEFAULT_RANK_TOL, consistency_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub solution: DenseMatrix,
    /// ‖obj_map·x − obj_rhs‖_F
    pub objective: f64,
    /// ‖eq_map·x − eq_rhs‖_F
    pub equality_residual: f64,
    /// ‖Nᵀ·obj_mapᵀ·(obj_map·x − obj_rhs)‖_F with N a null-space basis of eq_map
    pub stationarity: f64,
}

struct Split {
    pinv: DenseMatrix,
    /// Orthonormal basis of the null space, as columns; `None` when trivial.
    null_basis: Option<DenseMatrix>,
}

fn split(a: &DenseMatrix, rank_tol: f64) -> Split {
    let gram = (&a.transpose() * a).symmetrized();
    let eig = sym_eig(&gram).expect("Gram matrix is symmetric");
    let n = gram.rows();
    let cutoff = rank_tol * eig.max().max(0.0);
    let mut range_cols = Vec::new();
    let mut null_cols = Vec::new();
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            range_cols.push(k);
        } else {
            null_cols.push(k);
        }
    }
    // V_r·diag(1/λ)·V_rᵀ·Aᵀ
    let mut inv_gram = DenseMatrix::zeros(n, n);
    for &k in &range_cols {
        let w = 1.0 / eig.values[k];
        for i in 0..n {
            for j in 0..n {
                inv_gram[(i, j)] += eig.vectors[(i, k)] * w * eig.vectors[(j, k)];
            }
        }
    }
    let pinv = &inv_gram * &a.transpose();
    let null_basis = (!null_cols.is_empty()).then(|| {
        let mut basis = DenseMatrix::zeros(n, null_cols.len());
        for (c, &k) in null_cols.iter().enumerate() {
            for i in 0..n {
                basis[(i, c)] = eig.vectors[(i, k)];
            }
        }
        basis
    });
    Split { pinv, null_basis }
}

/// Moore–Penrose pseudoinverse through the eigendecomposition of AᵀA.
pub fn pinv(a: &DenseMatrix, rank_tol: f64) -> DenseMatrix {
    split(a, rank_tol).pinv
}

/// Minimizes ‖obj_map·x − obj_rhs‖_F subject to eq_map·x = eq_rhs and
/// returns the minimum-norm minimizer.
pub fn constrained_lstsq(
    obj_map: &DenseMatrix,
    obj_rhs: &DenseMatrix,
    eq_map: Option<&DenseMatrix>,
    eq_rhs: Option<&DenseMatrix>,
) -> Result<DenseMatrix, NumericsError> {
    Ok(solve_constrained(obj_map, obj_rhs, eq_map, eq_rhs, LstsqOptions::default())?.solution)
}

pub fn constrained_lstsq_with(
    obj_map: &DenseMatrix,
    obj_rhs: &DenseMatrix,
    eq_map: Option<&DenseMatrix>,
    eq_rhs: Option<&DenseMatrix>,
    options: LstsqOptions,
) -> Result<DenseMatrix, NumericsError> {
    Ok(solve_constrained(obj_map, obj_rhs, eq_map, eq_rhs, options)?.solution)
}

/// Null-space method: a particular solution x_p = eq_map⁺·eq_rhs, then an
/// unconstrained minimum-norm least squares over w in x = x_p + N·w.
pub fn solve_constrained(
    obj_map: &DenseMatrix,
    obj_rhs: &DenseMatrix,
    eq_map: Option<&DenseMatrix>,
    eq_rhs: Option<&DenseMatrix>,
    options: LstsqOptions,
) -> Result<LstsqSolution, NumericsError> {
    let unknowns = obj_map.cols();
    if obj_rhs.rows() != obj_map.rows() {
        return Err(NumericsError::ShapeMismatch { op: "constrained_lstsq objective", left: obj_map.shape(), right: obj_rhs.shape() });
    }
    let k = obj_rhs.cols();

    let (particular, null_basis) = match (eq_map, eq_rhs) {
        (Some(e), Some(d)) => {
            if e.cols() != unknowns || d.rows() != e.rows() || d.cols() != k {
                return Err(NumericsError::ShapeMismatch { op: "constrained_lstsq constraint", left: e.shape(), right: d.shape() });
            }
            let s = split(e, options.rank_tol);
            let xp = &s.pinv * d;
            let residual = (&(e * &xp) - d).frobenius_norm();
            let scale = d.frobenius_norm() + e.frobenius_norm() * xp.frobenius_norm();
            if residual > options.consistency_tol * scale {
                return Err(NumericsError::InconsistentConstraints { residual });
            }
            (xp, s.null_basis)
        }
        (None, None) => (DenseMatrix::zeros(unknowns, k), Some(DenseMatrix::identity(unknowns))),
        _ => {
            return Err(NumericsError::ShapeMismatch {
                op: "constrained_lstsq: eq_map and eq_rhs must be given together",
                left: (0, 0),
                right: (0, 0),
            })
        }
    };

    let solution = match &null_basis {
        Some(basis) => {
            let reduced = obj_map * basis;
            let target = obj_rhs - &(obj_map * &particular);
            let w = &pinv(&reduced, options.rank_tol) * &target;
            &particular + &(basis * &w)
        }
        None => particular,
    };

    let obj_residual = &(obj_map * &solution) - obj_rhs;
    let equality_residual = match (eq_map, eq_rhs) {
        (Some(e), Some(d)) => (&(e * &solution) - d).frobenius_norm(),
        _ => 0.0,
    };
    let stationarity = match &null_basis {
        Some(basis) => (&(&basis.transpose() * &obj_map.transpose()) * &obj_residual).frobenius_norm(),
        None => 0.0,
    };
    Ok(LstsqSolution { objective: obj_residual.frobenius_norm(), equality_residual, stationarity, solution })
}
