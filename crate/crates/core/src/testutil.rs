//! Random fixtures shared by unit and integration tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{DenseSym, RankRGram};
use crate::linalg;
use crate::rng::{stream_rng, Stream};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, Stream::Test);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random U with orthonormal, centered columns.
pub fn centered_orthonormal(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut g = gaussian(n, r, seed);
    linalg::center_columns(&mut g);
    linalg::thin_q(&g).0
}

/// Random centered PSD rank-r Gram with eigenvalues in [1, 3].
pub fn random_centered_gram(n: usize, r: usize, seed: u64) -> RankRGram {
    let u = centered_orthonormal(n, r, seed);
    let mut rng = stream_rng(seed ^ 0x5eed, Stream::Test);
    let lambda = DVector::from_fn(r, |_, _| 1.0 + 2.0 * rng.random::<f64>());
    RankRGram::new(u, lambda).unwrap()
}

pub fn random_sym(n: usize, seed: u64) -> DenseSym {
    let g = gaussian(n, n, seed);
    DenseSym::from_upper(&g + g.transpose()).unwrap()
}

/// Random symmetric matrix with zero row sums.
pub fn random_centered_sym(n: usize, seed: u64) -> DenseSym {
    let g = gaussian(n, n, seed);
    DenseSym::from_upper(linalg::double_center(&(&g + g.transpose()))).unwrap()
}

/// Random r×r orthogonal matrix.
pub fn random_orthogonal(r: usize, seed: u64) -> DMatrix<f64> {
    linalg::thin_q(&gaussian(r, r, seed)).0
}
