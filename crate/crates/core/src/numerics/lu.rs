use super::{require_square, DenseMatrix, NumericsError};

/// Solves A·X = B by LU factorization with partial pivoting.
///
/// A pivot smaller than `n·ε·max|A|` is treated as singular.
pub fn lu_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    let n = require_square(a)?;
    if b.rows() != n {
        return Err(NumericsError::ShapeMismatch { op: "lu_solve", left: a.shape(), right: b.shape() });
    }
    let k = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();
    let tiny = n as f64 * f64::EPSILON * a.max_abs();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
            .expect("non-empty pivot range");
        let pivot = lu[(pivot_row, col)];
        if pivot.abs() <= tiny || pivot == 0.0 {
            return Err(NumericsError::SingularOperator);
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            for j in 0..k {
                let tmp = x[(col, j)];
                x[(col, j)] = x[(pivot_row, j)];
                x[(pivot_row, j)] = tmp;
            }
        }
        for i in (col + 1)..n {
            let factor = lu[(i, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[(i, col)] = 0.0;
            for j in (col + 1)..n {
                lu[(i, j)] -= factor * lu[(col, j)];
            }
            for j in 0..k {
                x[(i, j)] -= factor * x[(col, j)];
            }
        }
    }

    for col in (0..n).rev() {
        let pivot = lu[(col, col)];
        for j in 0..k {
            let mut acc = x[(col, j)];
            for c in (col + 1)..n {
                acc -= lu[(col, c)] * x[(c, j)];
            }
            x[(col, j)] = acc / pivot;
        }
    }
    Ok(x)
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    let n = require_square(a)?;
    lu_solve(a, &DenseMatrix::identity(n))
}
