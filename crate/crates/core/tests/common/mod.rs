#![allow(dead_code)]

use halfv_core::linalg::sym_eig;
use halfv_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// Orthogonal matrix from the eigenvectors of a random symmetric matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let a = random_matrix(rng, n, n);
    let s = DenseMatrix::new(n, n, (0..n * n).map(|i| a.get(i / n, i % n) + a.get(i % n, i / n)).collect()).unwrap();
    sym_eig(&s).unwrap().eigenvectors
}
