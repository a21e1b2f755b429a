//! Tangent spaces of the rank-r symmetric manifold at a factored point,
//! and the hard-thresholding retraction.

use nalgebra::{DMatrix, DVector};

use crate::dualbasis::{w_expansion_mul, SparseSym, WInner};
use crate::error::{EdmcError, Result};
use crate::geometry::{DenseSym, RankRGram};
use crate::linalg;
use crate::sampling::{IndexPair, IndexSet};

/// A symmetric matrix that can be right-multiplied by a tall dense block.
pub trait SymOperand {
    fn dim(&self) -> usize;
    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64>;
}

impl SymOperand for DenseSym {
    fn dim(&self) -> usize {
        self.n()
    }

    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix() * b
    }
}

impl SymOperand for SparseSym {
    fn dim(&self) -> usize {
        self.n()
    }

    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        SparseSym::mul_dense(self, b)
    }
}

/// Σ_{α∈Ω} g_α w_α, never materialized.
#[derive(Debug, Clone, Copy)]
pub struct WExpansion<'a> {
    pub omega: &'a IndexSet,
    pub coeffs: &'a [f64],
}

impl SymOperand for WExpansion<'_> {
    fn dim(&self) -> usize {
        self.omega.n()
    }

    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        w_expansion_mul(self.omega, self.coeffs, b)
    }
}

/// P_T(Y) = U M Uᵀ + Zu Uᵀ + U Zuᵀ with Zuᵀ U = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    u: DMatrix<f64>,
    m: DMatrix<f64>,
    zu: DMatrix<f64>,
}

impl TangentVector {
    pub fn zero(base: &RankRGram) -> Self {
        let (n, r) = (base.n(), base.r());
        TangentVector {
            u: base.u().clone(),
            m: DMatrix::zeros(r, r),
            zu: DMatrix::zeros(n, r),
        }
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn core(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn zu(&self) -> &DMatrix<f64> {
        &self.zu
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn to_dense(&self) -> DenseSym {
        let um = &self.u * &self.m;
        let cross = &self.zu * self.u.transpose();
        let mut y = um * self.u.transpose() + &cross + cross.transpose();
        linalg::mirror_upper(&mut y);
        DenseSym::from_upper(y).expect("finite")
    }

    /// ⟨A, B⟩_F for two tangent vectors at the same base.
    pub fn inner(&self, other: &TangentVector) -> f64 {
        self.m.dot(&other.m) + 2.0 * self.zu.dot(&other.zu)
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            u: self.u.clone(),
            m: &self.m * s,
            zu: &self.zu * s,
        }
    }

    /// self + s·other, both at the same base.
    pub fn axpy(&self, s: f64, other: &TangentVector) -> TangentVector {
        TangentVector {
            u: self.u.clone(),
            m: &self.m + &other.m * s,
            zu: &self.zu + &other.zu * s,
        }
    }

    /// Applies J on both sides; stays in the tangent space when Uᵀ1 = 0.
    pub fn recentered(&self) -> TangentVector {
        let mut zu = self.zu.clone();
        linalg::center_columns(&mut zu);
        TangentVector {
            u: self.u.clone(),
            m: self.m.clone(),
            zu,
        }
    }

    /// ⟨Y, w_α⟩ for every α in Ω in O(m r).
    pub fn w_coefficients(&self, omega: &IndexSet) -> Vec<f64> {
        let um = &self.u * &self.m;
        let r = self.u.ncols();
        omega
            .iter()
            .map(|a| {
                (0..r)
                    .map(|k| {
                        let du = self.u[(a.i, k)] - self.u[(a.j, k)];
                        let dum = um[(a.i, k)] - um[(a.j, k)];
                        let dz = self.zu[(a.i, k)] - self.zu[(a.j, k)];
                        du * (dum + 2.0 * dz)
                    })
                    .sum()
            })
            .collect()
    }
}

impl WInner for TangentVector {
    fn dim(&self) -> usize {
        self.n()
    }

    fn w_inner(&self, a: IndexPair) -> f64 {
        let r = self.u.ncols();
        let du = DVector::from_fn(r, |k, _| self.u[(a.i, k)] - self.u[(a.j, k)]);
        let dz = DVector::from_fn(r, |k, _| self.zu[(a.i, k)] - self.zu[(a.j, k)]);
        (du.transpose() * &self.m * &du)[(0, 0)] + 2.0 * dz.dot(&du)
    }
}

/// M = Uᵀ Y U, Zu = (I − UUᵀ) Y U.
pub fn project_tangent<Y: SymOperand + ?Sized>(base: &RankRGram, y: &Y) -> Result<TangentVector> {
    if y.dim() != base.n() {
        return Err(EdmcError::ShapeMismatch(format!(
            "operand is {} but base is {}",
            y.dim(),
            base.n()
        )));
    }
    let u = base.u();
    let yu = y.mul_dense(u);
    let m = u.transpose() * &yu;
    let m = (&m + m.transpose()) * 0.5;
    let zu = &yu - u * &m;
    Ok(TangentVector {
        u: u.clone(),
        m,
        zu,
    })
}

/// Result of a rank-r truncation.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub gram: RankRGram,
    /// |λ_r| = |λ_{r+1}|: the truncation is not unique.
    pub tie: bool,
    /// Fewer than r nonzero eigenvalues were available.
    pub rank_deficient: bool,
}

/// Eigenvalues among the leading r that are nonzero, relative to |λ₁| and
/// to an external `scale` (the magnitude of the matrix being updated).
fn count_nonzero(values: &DVector<f64>, r: usize, scale: f64) -> usize {
    let lead = values.get(0).map_or(0.0, |v| v.abs());
    let tol = f64::EPSILON * (values.len().max(1) as f64) * lead + 1e-12 * scale;
    values
        .iter()
        .take(r)
        .filter(|v| v.abs() > tol && lead > 0.0)
        .count()
}

/// ℋ_r: keep the r eigenpairs of largest magnitude.
pub fn hard_threshold(y: &DenseSym, r: usize) -> Thresholded {
    let eig = linalg::sorted_eigen(y.matrix());
    let r = r.min(y.n());
    let u = eig.vectors.columns(0, r).into_owned();
    let lambda = eig.values.rows(0, r).into_owned();
    Thresholded {
        tie: linalg::boundary_tie(&eig.values, r),
        rank_deficient: count_nonzero(&eig.values, r, 0.0) < r,
        gram: RankRGram::new(u, lambda).expect("finite eigenpairs"),
    }
}

/// Output of [`retract_structured`].
#[derive(Debug, Clone)]
pub struct Retraction {
    pub gram: RankRGram,
    /// ‖X_new − X_base‖_F, exact, from the 2r-dimensional core.
    pub change: f64,
    pub tie: bool,
}

/// ℋ_r(X + step·T) via a thin QR of [U | Zu] and an eigendecomposition of
/// the 2r×2r core, in O(n r² + r³).
pub fn retract_structured(base: &RankRGram, t: &TangentVector, step: f64) -> Result<Retraction> {
    let (n, r) = (base.n(), base.r());
    if t.n() != n || t.m.nrows() != r {
        return Err(EdmcError::ShapeMismatch(
            "tangent vector does not match base".into(),
        ));
    }
    let mut stacked = DMatrix::zeros(n, 2 * r);
    stacked.view_mut((0, 0), (n, r)).copy_from(base.u());
    stacked.view_mut((0, r), (n, r)).copy_from(&(&t.zu * step));
    let (q, rr) = linalg::thin_q(&stacked);

    // Q may have fewer than 2r columns when n < 2r; the core stays 2r×2r and
    // R maps it down.
    let mut core = DMatrix::zeros(2 * r, 2 * r);
    let lam = DMatrix::from_diagonal(base.lambda());
    core.view_mut((0, 0), (r, r))
        .copy_from(&(lam + &t.m * step));
    for i in 0..r {
        core[(i, r + i)] = 1.0;
        core[(r + i, i)] = 1.0;
    }
    let mut kmat = &rr * core * rr.transpose();
    linalg::mirror_upper(&mut kmat);
    let eig = linalg::sorted_eigen(&kmat);

    let base_scale = base.lambda().amax();
    let found = count_nonzero(&eig.values, r, base_scale);
    if found < r {
        return Err(EdmcError::RankCollapse { found, required: r });
    }
    let v = eig.vectors.columns(0, r).into_owned();
    let new_lambda = eig.values.rows(0, r).into_owned();

    let old_core = {
        let a = rr.columns(0, r);
        &a * DMatrix::from_diagonal(base.lambda()) * a.transpose()
    };
    let new_core = &v * DMatrix::from_diagonal(&new_lambda) * v.transpose();
    let change = (new_core - old_core).norm();

    Ok(Retraction {
        gram: RankRGram::new(&q * v, new_lambda)?,
        change,
        tie: linalg::boundary_tie(&eig.values, r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_centered_gram, random_sym};
    use approx::assert_abs_diff_eq;

    fn diag(v: &[f64]) -> DenseSym {
        DenseSym::from_upper(DMatrix::from_diagonal(&DVector::from_row_slice(v))).unwrap()
    }

    fn dense_projection(u: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let pu = u * u.transpose();
        &pu * y + y * &pu - &pu * y * &pu
    }

    #[test]
    fn projecting_base_reproduces_it() {
        let x = random_centered_gram(12, 3, 1);
        let t = project_tangent(&x, &x.to_dense()).unwrap();
        assert!((t.to_dense().matrix() - x.to_dense().matrix()).amax() < 1e-12);
    }

    #[test]
    fn normal_input_projects_to_zero() {
        let x = random_centered_gram(10, 2, 2);
        let u = x.u();
        let pu = u * u.transpose();
        let perp = DMatrix::<f64>::identity(10, 10) - pu;
        let z = &perp * DVector::from_fn(10, |i, _| (i as f64).sin());
        let w = &perp * DVector::from_fn(10, |i, _| (i as f64 * 0.7).cos());
        let y = &z * w.transpose() + &w * z.transpose();
        let t = project_tangent(&x, &DenseSym::from_upper(y).unwrap()).unwrap();
        assert!(t.norm() < 1e-12);
    }

    #[test]
    fn projection_matches_dense_formula() {
        let x = random_centered_gram(10, 2, 3);
        let y = random_sym(10, 4);
        let t = project_tangent(&x, &y).unwrap();
        let want = dense_projection(x.u(), y.matrix());
        assert!((t.to_dense().matrix() - &want).amax() < 1e-11);
        assert!((t.zu().transpose() * x.u()).amax() < 1e-9);
        assert_abs_diff_eq!(t.norm_sq(), want.norm_squared(), epsilon = 1e-9);
    }

    #[test]
    fn tangent_w_coefficients_match_dense() {
        let x = random_centered_gram(9, 2, 5);
        let t = project_tangent(&x, &random_sym(9, 6)).unwrap();
        let omega = IndexSet::full(9);
        let fast = t.w_coefficients(&omega);
        let dense = t.to_dense();
        for (a, f) in omega.iter().zip(&fast) {
            assert_abs_diff_eq!(*f, dense.w_inner(*a), epsilon = 1e-12);
            assert_abs_diff_eq!(*f, t.w_inner(*a), epsilon = 1e-12);
        }
    }

    #[test]
    fn threshold_examples() {
        let h = hard_threshold(&diag(&[3.0, 1.0, 0.0]), 1);
        assert!((h.gram.to_dense().matrix() - diag(&[3.0, 0.0, 0.0]).matrix()).amax() < 1e-15);
        let h = hard_threshold(&diag(&[3.0, -2.0, 1.0]), 2);
        assert!((h.gram.to_dense().matrix() - diag(&[3.0, -2.0, 0.0]).matrix()).amax() < 1e-15);
        assert!(!h.tie);
        let tie = hard_threshold(&diag(&[3.0, 1.0, -1.0]), 2);
        assert!(tie.tie);
        let deficient = hard_threshold(&diag(&[3.0, 0.0, 0.0]), 2);
        assert!(deficient.rank_deficient);
    }

    #[test]
    fn threshold_of_rank_r_is_fixed_point() {
        let x = random_centered_gram(15, 3, 7);
        let h = hard_threshold(&x.to_dense(), 3);
        assert!((h.gram.to_dense().matrix() - x.to_dense().matrix()).amax() < 1e-12);
    }

    #[test]
    fn retraction_trivial_steps() {
        let x = random_centered_gram(20, 3, 8);
        let t = project_tangent(&x, &random_sym(20, 9)).unwrap();
        let same = retract_structured(&x, &t, 0.0).unwrap();
        assert!(x.distance(&same.gram) < 1e-12);
        assert!(same.change < 1e-12);
        let zero = retract_structured(&x, &TangentVector::zero(&x), 0.3).unwrap();
        assert!(x.distance(&zero.gram) < 1e-12);
    }

    #[test]
    fn retraction_matches_dense_threshold() {
        let x = random_centered_gram(30, 3, 10);
        let t = project_tangent(&x, &random_sym(30, 11)).unwrap();
        let fast = retract_structured(&x, &t, 0.7).unwrap();
        let w = x.to_dense().matrix() + t.to_dense().matrix() * 0.7;
        let slow = hard_threshold(&DenseSym::from_upper(w).unwrap(), 3);
        let scale = slow.gram.fro_norm();
        assert!(fast.gram.distance(&slow.gram) <= 1e-9 * scale);
        assert!(fast.gram.orthonormality_defect() < 1e-12);
        assert_abs_diff_eq!(fast.change, fast.gram.distance(&x), epsilon = 1e-9 * scale);
    }

    #[test]
    fn retraction_detects_collapse() {
        let x = random_centered_gram(10, 2, 12);
        let t = project_tangent(&x, &x.to_dense()).unwrap();
        assert!(matches!(
            retract_structured(&x, &t, -1.0),
            Err(EdmcError::RankCollapse { .. })
        ));
    }
}
