#![allow(dead_code)]

use lyapkit::linops::SparseMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random sparse matrix with a negative dominant diagonal, hence stable.
pub fn random_stable_sparse(n: usize, density: f64, symmetric: bool, seed: u64) -> SparseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < density {
                dense[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    if symmetric {
        dense = (&dense + dense.transpose()) * 0.5;
    }
    for i in 0..n {
        let off: f64 = dense.row(i).iter().map(|v| v.abs()).sum();
        dense[(i, i)] = -(off + rng.gen_range(0.5..2.0));
    }
    SparseMatrix::from_dense(&dense)
}

pub fn random_dense(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    random_dense(n, n, seed).qr().q()
}
