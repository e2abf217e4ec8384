//! Seeded random inputs shared by the verification suites, gradient checks
//! and tests. Everything draws from a [`ChaCha8Rng`] so results are
//! identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{compute_affinity, normalize, symmetrize, AffinityMatrix, FeatureMap, Kernel, Normalization};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries drawn uniformly from `[lo, hi)`.
pub fn uniform_matrix<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.gen_range(lo..hi)))
}

pub fn uniform_feature_map<T: Scalar, R: Rng>(
    rng: &mut R,
    height: usize,
    width: usize,
    channels: usize,
) -> FeatureMap<T> {
    let values = uniform_matrix(rng, height * width, channels, -1.0, 1.0);
    FeatureMap::new(height, width, values).expect("grid matches by construction")
}

/// Symmetric-normalized affinity of random `n x c_s` embeddings under the
/// `exp_dot` kernel.
pub fn symmetric_affinity<T: Scalar, R: Rng>(rng: &mut R, n: usize, c_s: usize) -> Result<AffinityMatrix<T>> {
    let phi = uniform_matrix(rng, n, c_s, -1.0, 1.0);
    let psi = uniform_matrix(rng, n, c_s, -1.0, 1.0);
    let m = compute_affinity(&phi, &psi, Kernel::ExpDot)?;
    normalize(&symmetrize(&m)?, Normalization::Symmetric)
}

/// Features that are nearly rank deficient: every position is a tiny
/// perturbation of one shared direction, with one position an exact
/// duplicate of another. `jitter` controls the perturbation size.
pub fn near_degenerate_features<T: Scalar, R: Rng>(
    rng: &mut R,
    height: usize,
    width: usize,
    channels: usize,
    jitter: f64,
) -> FeatureMap<T> {
    let n = height * width;
    let base: Vec<f64> = (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut values = Matrix::from_fn(n, channels, |_, j| T::of(base[j] + jitter * rng.gen_range(-1.0..1.0)));
    if n > 1 {
        let first = values.row(0).to_vec();
        values.row_mut(n - 1).copy_from_slice(&first);
    }
    FeatureMap::new(height, width, values).expect("grid matches by construction")
}
