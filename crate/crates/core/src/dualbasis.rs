//! The basis {w_α} of the centered symmetric matrices, its dual {v_α}, and
//! the sampling operators built from them.
//!
//! For α = (i, j):
//!
//! ```text
//! w_α = e_ii + e_jj − e_ij − e_ji          ⟨X, w_α⟩ = D_ij
//! v_α = −½ (a bᵀ + b aᵀ),  a = J e_i,  b = J e_j
//! ```
//!
//! Every operator consumes coefficients c_α = ⟨Y, w_α⟩ on Ω (sorted order)
//! rather than matrices. F_Ω, R*_ΩR_Ω and M_Ω all return a w-expansion
//! Σ_{β∈Ω} g_β w_β, so their images are sparse with at most 4m nonzeros and
//! no dense correction term: the J-conjugation in R*R only enters through
//! the O(m + n) evaluation of (J S J)_β at the sampled positions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{EdmcError, Result};
use crate::geometry::{DenseSym, RankRGram};
use crate::sampling::{IndexPair, IndexSet};

/// Anything that can report ⟨X, w_α⟩.
pub trait WInner {
    fn dim(&self) -> usize;
    fn w_inner(&self, alpha: IndexPair) -> f64;
}

impl WInner for DenseSym {
    fn dim(&self) -> usize {
        self.n()
    }

    fn w_inner(&self, a: IndexPair) -> f64 {
        let m = self.matrix();
        m[(a.i, a.i)] + m[(a.j, a.j)] - m[(a.i, a.j)] - m[(a.j, a.i)]
    }
}

impl WInner for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn w_inner(&self, a: IndexPair) -> f64 {
        self[(a.i, a.i)] + self[(a.j, a.j)] - self[(a.i, a.j)] - self[(a.j, a.i)]
    }
}

impl WInner for RankRGram {
    fn dim(&self) -> usize {
        self.n()
    }

    /// Σ_k λ_k (u_ik − u_jk)², i.e. ‖Λ^{1/2}(uᵢ − uⱼ)‖² for PSD factors.
    fn w_inner(&self, a: IndexPair) -> f64 {
        let (u, lam) = (self.u(), self.lambda());
        (0..self.r())
            .map(|k| {
                let d = u[(a.i, k)] - u[(a.j, k)];
                lam[k] * d * d
            })
            .sum()
    }
}

/// Checked variant of [`WInner::w_inner`].
pub fn w_inner<X: WInner + ?Sized>(x: &X, alpha: IndexPair) -> Result<f64> {
    alpha.check(x.dim())?;
    Ok(x.w_inner(alpha))
}

/// ⟨X, w_α⟩ for every α in Ω, in Ω's order.
pub fn w_coefficients<X: WInner + ?Sized>(x: &X, omega: &IndexSet) -> Vec<f64> {
    omega.iter().map(|a| x.w_inner(*a)).collect()
}

/// Closed-form Gram constants of the basis and its dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualBasisConstants {
    pub n: usize,
    /// ‖v_α‖_F² = H^{αα}.
    pub v_norm_sq: f64,
    pub h_diag: f64,
    /// H^{αβ} for distinct pairs sharing an index.
    pub h_adjacent: f64,
    /// H^{αβ} for disjoint pairs.
    pub h_disjoint: f64,
    pub h_eig_max: f64,
    pub hinv_eig_max: f64,
    pub w_spectral: f64,
    pub v_spectral: f64,
}

impl DualBasisConstants {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        let diag = 0.5 * (1.0 - 2.0 / nf + 2.0 / (nf * nf));
        DualBasisConstants {
            n,
            v_norm_sq: diag,
            h_diag: diag,
            h_adjacent: -1.0 / (2.0 * nf) + 1.0 / (nf * nf),
            h_disjoint: 1.0 / (nf * nf),
            h_eig_max: 2.0 * nf,
            hinv_eig_max: 0.5,
            w_spectral: 2.0,
            v_spectral: 0.5,
        }
    }

    /// ⟨v_α, v_β⟩ from the closed form.
    pub fn hinv_entry(&self, a: IndexPair, b: IndexPair) -> f64 {
        if a == b {
            self.h_diag
        } else if a.intersects(&b) {
            self.h_adjacent
        } else {
            self.h_disjoint
        }
    }
}

/// Sparse symmetric matrix stored by its upper triangle (diagonal included).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SparseSym {
    pub fn zeros(n: usize) -> Self {
        SparseSym {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz_upper(&self) -> usize {
        self.entries.len()
    }

    /// Adds `v` at (i, j) and, implicitly, (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let key = (i.min(j), i.max(j));
        *self.entries.entry(key).or_insert(0.0) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .get(&(i.min(j), i.max(j)))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn to_dense(&self) -> DenseSym {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &v) in &self.entries {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        DenseSym::from_upper(m).expect("finite entries")
    }

    pub fn row_sums(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.n);
        for (&(i, j), &v) in &self.entries {
            s[i] += v;
            if i != j {
                s[j] += v;
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Y · B for a dense n×k matrix B.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, b.ncols());
        for (&(i, j), &v) in &self.entries {
            for k in 0..b.ncols() {
                out[(i, k)] += v * b[(j, k)];
                if i != j {
                    out[(j, k)] += v * b[(i, k)];
                }
            }
        }
        out
    }
}

impl WInner for SparseSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn w_inner(&self, a: IndexPair) -> f64 {
        self.get(a.i, a.i) + self.get(a.j, a.j) - 2.0 * self.get(a.i, a.j)
    }
}

fn check_len(omega: &IndexSet, coeffs: &[f64]) {
    assert_eq!(
        omega.len(),
        coeffs.len(),
        "coefficient vector must align with the index set"
    );
}

/// F_Ω: Σ_{α∈Ω} c_α w_α, built in O(m).
pub fn f_omega_apply(omega: &IndexSet, coeffs: &[f64]) -> SparseSym {
    check_len(omega, coeffs);
    let mut out = SparseSym::zeros(omega.n());
    for (a, &c) in omega.iter().zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        out.add(a.i, a.i, c);
        out.add(a.j, a.j, c);
        out.add(a.i, a.j, -c);
    }
    out
}

/// (Σ_{α∈Ω} c_α w_α) · B in O(m k) without forming the sparse matrix.
///
/// w_α B = (e_i − e_j)(b_i − b_j)ᵀ, so each term touches two rows.
pub fn w_expansion_mul(omega: &IndexSet, coeffs: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    check_len(omega, coeffs);
    let k = b.ncols();
    let mut out = DMatrix::zeros(omega.n(), k);
    for (a, &c) in omega.iter().zip(coeffs) {
        for col in 0..k {
            let d = c * (b[(a.i, col)] - b[(a.j, col)]);
            out[(a.i, col)] += d;
            out[(a.j, col)] -= d;
        }
    }
    out
}

/// R_Ω applied to data with coefficients c: −½ J S J, where S holds c_α at
/// (i, j) and (j, i). Kept implicit: S plus its row sums and total.
#[derive(Debug, Clone)]
pub struct ROmegaImage {
    omega: IndexSet,
    coeffs: Vec<f64>,
    row_sums: DVector<f64>,
    total: f64,
}

impl ROmegaImage {
    pub fn new(omega: &IndexSet, coeffs: &[f64]) -> Self {
        check_len(omega, coeffs);
        let mut row_sums = DVector::zeros(omega.n());
        for (a, &c) in omega.iter().zip(coeffs) {
            row_sums[a.i] += c;
            row_sums[a.j] += c;
        }
        let total = row_sums.sum();
        ROmegaImage {
            omega: omega.clone(),
            coeffs: coeffs.to_vec(),
            row_sums,
            total,
        }
    }

    pub fn n(&self) -> usize {
        self.omega.n()
    }

    /// (J S J)_{kl} given S_{kl}, in O(1).
    fn jsj(&self, k: usize, l: usize, s_kl: f64) -> f64 {
        let nf = self.n() as f64;
        s_kl - (self.row_sums[k] + self.row_sums[l]) / nf + self.total / (nf * nf)
    }

    /// Materializes −½ J S J in O(n² + m).
    pub fn to_dense(&self) -> DenseSym {
        let n = self.n();
        let nf = n as f64;
        let t = self.total / (nf * nf);
        let mut m = DMatrix::from_fn(n, n, |k, l| {
            -0.5 * (t - (self.row_sums[k] + self.row_sums[l]) / nf)
        });
        for (a, &c) in self.omega.iter().zip(&self.coeffs) {
            m[(a.i, a.j)] -= 0.5 * c;
            m[(a.j, a.i)] -= 0.5 * c;
        }
        DenseSym::from_upper(m).expect("finite entries")
    }

    /// (−½ J S J) x in O(m + n).
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mean = x.sum() / n as f64;
        let y = x.add_scalar(-mean);
        let mut z = DVector::<f64>::zeros(n);
        for (a, &c) in self.omega.iter().zip(&self.coeffs) {
            z[a.i] += c * y[a.j];
            z[a.j] += c * y[a.i];
        }
        let zm = z.sum() / n as f64;
        z.add_scalar(-zm) * -0.5
    }
}

/// R_Ω(Y) = Σ_{α∈Ω} c_α v_α, materialized.
pub fn r_omega_apply(omega: &IndexSet, coeffs: &[f64]) -> DenseSym {
    ROmegaImage::new(omega, coeffs).to_dense()
}

/// R_Ω from a hollow symmetric matrix holding P_Ω(D).
pub fn r_omega_from_sampled(d: &SparseSym) -> Result<DenseSym> {
    let mut pairs = Vec::new();
    let mut coeffs = Vec::new();
    for (i, j, v) in d.iter_upper() {
        if i == j {
            if v != 0.0 {
                return Err(EdmcError::InvalidInput(
                    "sampled distances must be hollow".into(),
                ));
            }
            continue;
        }
        pairs.push(IndexPair { i, j });
        coeffs.push(v);
    }
    let omega = IndexSet::new(d.n(), pairs)?;
    Ok(r_omega_apply(&omega, &coeffs))
}

/// Coefficients of R*_ΩR_Ω(Y) in the w-expansion on Ω:
/// q_β = ⟨R_Ω Y, v_β⟩ = ½ (J S J)_β, computed in O(m + n).
pub fn rstar_r_coeffs(omega: &IndexSet, coeffs: &[f64]) -> Vec<f64> {
    let img = ROmegaImage::new(omega, coeffs);
    omega
        .iter()
        .zip(coeffs)
        .map(|(b, &c)| 0.5 * img.jsj(b.i, b.j, c))
        .collect()
}

/// R*_ΩR_Ω(Y) = Σ_{α,β∈Ω} c_α ⟨v_α, v_β⟩ w_β.
pub fn rstar_r_apply(omega: &IndexSet, coeffs: &[f64]) -> SparseSym {
    f_omega_apply(omega, &rstar_r_coeffs(omega, coeffs))
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(EdmcError::InvalidProbability(p));
    }
    Ok(())
}

/// Coefficients of M_Ω(Y) = R*R(Y) − ‖v_α‖²(1 − p) F_Ω(Y) on Ω.
pub fn m_omega_coeffs(omega: &IndexSet, coeffs: &[f64], p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    let h = DualBasisConstants::new(omega.n()).v_norm_sq;
    let shrink = h * (1.0 - p);
    Ok(rstar_r_coeffs(omega, coeffs)
        .into_iter()
        .zip(coeffs)
        .map(|(q, &c)| q - shrink * c)
        .collect())
}

pub fn m_omega_apply(omega: &IndexSet, coeffs: &[f64], p: f64) -> Result<SparseSym> {
    Ok(f_omega_apply(omega, &m_omega_coeffs(omega, coeffs, p)?))
}

/// Σ_{α∈𝕀} v_α² = ((n² − 2n + 2)/(4n)) J.
pub fn sum_v_squared(n: usize) -> Result<DenseSym> {
    if n < 2 {
        return Err(EdmcError::InvalidInput("need n >= 2".into()));
    }
    let nf = n as f64;
    let c = (nf * nf - 2.0 * nf + 2.0) / (4.0 * nf);
    let j = DMatrix::from_fn(n, n, |a, b| if a == b { 1.0 - 1.0 / nf } else { -1.0 / nf });
    DenseSym::from_upper(j * c)
}

/// Dense constructions used as independent oracles for the fast paths.
pub mod dense {
    use super::*;
    use crate::sampling::all_pairs;

    /// Largest n accepted by the dense materializations.
    pub const MAX_DENSE_N: usize = 20;

    pub fn w_dense(n: usize, a: IndexPair) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        m[(a.i, a.i)] = 1.0;
        m[(a.j, a.j)] = 1.0;
        m[(a.i, a.j)] = -1.0;
        m[(a.j, a.i)] = -1.0;
        m
    }

    /// v_α = −½ (a bᵀ + b aᵀ) with a = e_i − 1/n, b = e_j − 1/n.
    pub fn v_alpha_dense(n: usize, alpha: IndexPair) -> DenseSym {
        let nf = n as f64;
        let a = DVector::from_fn(n, |k, _| if k == alpha.i { 1.0 } else { 0.0 } - 1.0 / nf);
        let b = DVector::from_fn(n, |k, _| if k == alpha.j { 1.0 } else { 0.0 } - 1.0 / nf);
        let m = (&a * b.transpose() + &b * a.transpose()) * -0.5;
        DenseSym::from_upper(m).expect("finite")
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Operator {
        F,
        R,
        RStarR,
        M,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Coordinates {
        /// L×L matrix A with op(Σ t_α w_α) = Σ (A t)_β w_β over all of 𝕀.
        W,
        /// n²×n² matrix acting on column-major vec(Y) for arbitrary Y.
        Ambient,
    }

    fn guard(n: usize) -> Result<()> {
        if n > MAX_DENSE_N {
            return Err(EdmcError::TooLarge {
                n,
                limit: MAX_DENSE_N,
            });
        }
        Ok(())
    }

    /// Brute-force Gram matrices H = [⟨w_α, w_β⟩] and [⟨v_α, v_β⟩] over 𝕀.
    pub fn gram_matrices(n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        guard(n)?;
        let pairs: Vec<IndexPair> = all_pairs(n).collect();
        let ws: Vec<DMatrix<f64>> = pairs.iter().map(|a| w_dense(n, *a)).collect();
        let vs: Vec<DMatrix<f64>> = pairs
            .iter()
            .map(|a| v_alpha_dense(n, *a).into_matrix())
            .collect();
        let l = pairs.len();
        let h = DMatrix::from_fn(l, l, |a, b| ws[a].dot(&ws[b]));
        let hv = DMatrix::from_fn(l, l, |a, b| vs[a].dot(&vs[b]));
        Ok((h, hv))
    }

    /// Dense matrix of F_Ω, R_Ω, R*_ΩR_Ω or M_Ω built from explicit dense
    /// w_α and v_α, independent of the fast coefficient paths.
    pub fn dense_operator_matrix(
        op: Operator,
        n: usize,
        omega: &IndexSet,
        p: f64,
        coords: Coordinates,
    ) -> Result<DMatrix<f64>> {
        guard(n)?;
        if omega.n() != n {
            return Err(EdmcError::ShapeMismatch("index set dimension".into()));
        }
        if op == Operator::M {
            check_p(p)?;
        }
        let pairs: Vec<IndexPair> = all_pairs(n).collect();
        let l = pairs.len();
        let (h, hv) = gram_matrices(n)?;
        let sel: Vec<bool> = pairs.iter().map(|a| omega.contains(a)).collect();
        // Coupling matrix K over 𝕀 with op(Y) = Σ_{α,β} K_{αβ} ⟨Y, w_α⟩ w_β,
        // except for R whose output side is v_β rather than w_β.
        let coupling = DMatrix::from_fn(l, l, |a, b| {
            if !(sel[a] && sel[b]) {
                return 0.0;
            }
            match op {
                Operator::F | Operator::R => {
                    if a == b {
                        1.0
                    } else {
                        0.0
                    }
                }
                Operator::RStarR => hv[(a, b)],
                Operator::M => {
                    if a == b {
                        p * hv[(a, b)]
                    } else {
                        hv[(a, b)]
                    }
                }
            }
        });
        match coords {
            Coordinates::W => {
                // ⟨Y, w_α⟩ = (H t)_α; v_β = Σ_γ (H⁻¹)_{βγ} w_γ.
                let base = coupling.transpose() * &h;
                Ok(match op {
                    Operator::R => &hv * base,
                    _ => base,
                })
            }
            Coordinates::Ambient => {
                let n2 = n * n;
                let wvec = DMatrix::from_fn(l, n2, |a, k| w_dense(n, pairs[a])[k]);
                let out_basis = match op {
                    Operator::R => {
                        DMatrix::from_fn(l, n2, |a, k| v_alpha_dense(n, pairs[a]).matrix()[k])
                    }
                    _ => wvec.clone(),
                };
                Ok(out_basis.transpose() * coupling.transpose() * wvec)
            }
        }
    }

    /// Applies an ambient operator matrix to a dense n×n matrix.
    pub fn apply_ambient(a: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = y.nrows();
        let v = DVector::from_column_slice(y.as_slice());
        let out = a * v;
        DMatrix::from_column_slice(n, n, out.as_slice())
    }
}
