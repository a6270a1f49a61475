//! Deterministic fixtures for the criterion benches.

use gaas_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entries uniform in [-1, 1), reproducible per seed.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::new(rows, cols, data).expect("positive shape")
}

/// Symmetric positive definite: XᵀX + n·I.
pub fn random_spd(n: usize, seed: u64) -> DenseMatrix {
    let x = random_matrix(n, n, seed);
    let mut s = x.transpose().matmul(&x);
    for i in 0..n {
        s[(i, i)] += n as f64;
    }
    s
}

/// Hurwitz: random matrix shifted left by its row-sum bound.
pub fn random_hurwitz(n: usize, seed: u64) -> DenseMatrix {
    let mut a = random_matrix(n, n, seed);
    for i in 0..n {
        a[(i, i)] -= n as f64 + 1.0;
    }
    a
}
