//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, ordered by descending magnitude.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Ordering used everywhere an eigendecomposition is truncated: descending
/// |λ|, then descending signed value, then lowest original index.
pub fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (va, vb) = (values[a], values[b]);
        vb.abs()
            .total_cmp(&va.abs())
            .then(vb.total_cmp(&va))
            .then(a.cmp(&b))
    });
    idx
}

pub fn sorted_eigen(a: &DMatrix<f64>) -> SortedEigen {
    let eig = SymmetricEigen::new(a.clone());
    let order = magnitude_order(eig.eigenvalues.as_slice());
    let n = a.nrows();
    let mut values = DVector::zeros(order.len());
    let mut vectors = DMatrix::zeros(n, order.len());
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src];
        vectors.set_column(k, &eig.eigenvectors.column(src));
    }
    SortedEigen { values, vectors }
}

/// True when |λ_r| and |λ_{r+1}| coincide up to roundoff.
pub fn boundary_tie(values: &DVector<f64>, r: usize) -> bool {
    if r == 0 || r >= values.len() {
        return false;
    }
    let scale = values[0].abs().max(f64::MIN_POSITIVE);
    (values[r - 1].abs() - values[r].abs()).abs() <= 1e-12 * scale
}

/// Subtract column means in place.
pub fn center_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return;
    }
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
}

/// J A J for J = I - 11ᵀ/n, computed in O(n²).
pub fn double_center(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| a.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| a.column(j).sum() / nf).collect();
    let total = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| a[(i, j)] - row_means[i] - col_means[j] + total)
}

/// Symmetrize by copying the upper triangle into the lower one.
pub fn mirror_upper(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            a[(i, j)] = a[(j, i)];
        }
    }
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Orthonormal basis for the column span of `a` (Householder thin QR).
pub fn thin_q(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}
