//! Synthetic problems shared by the benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use svmbal::{gram, q_matrix, standardize, KernelSpec, QMatrix};

pub struct Instance {
    pub xs: DMatrix<f64>,
    pub w: Vec<f64>,
    pub q: QMatrix,
}

/// `n` units, `p` Gaussian covariates, every third unit treated and
/// shifted by 0.5.
pub fn instance(n: usize, p: usize, kernel: &KernelSpec, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let x = DMatrix::from_fn(n, p, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z + if w[i] > 0.0 { 0.5 } else { 0.0 }
    });
    let xs = standardize(&x).xs;
    let kernel = kernel.resolve(&xs).expect("valid kernel");
    let q = q_matrix(&gram(&xs, &kernel).expect("gram"), &w).expect("q");
    Instance { xs, w, q }
}
