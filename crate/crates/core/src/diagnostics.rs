//! Incoherence and restricted-isometry diagnostics for a ground-truth Gram.
//!
//! P_U below is the one-sided projector Y ↦ UUᵀY, so that
//! ⟨P_U w_α, P_U w_β⟩ = ((uᵢ−uⱼ)·(u_k−u_l)) · ((eᵢ−eⱼ)·(e_k−e_l)).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dualbasis::m_omega_coeffs;
use crate::error::{EdmcError, Result};
use crate::geometry::{DenseSym, RankRGram};
use crate::linalg;
use crate::manifold::{project_tangent, TangentVector, WExpansion};
use crate::rng::{stream_rng, Stream};
use crate::sampling::{all_pairs, IndexPair, IndexSet};

/// Ratio between the Assumption-style normalization ‖P_U w_α‖² ≤ νr/(2n)
/// and the geometric one max ‖uᵢ−uⱼ‖² ≤ 2νr/n used by [`CoherenceReport::nu`].
pub const ASSUMPTION_NU_FACTOR: f64 = 8.0;

/// Above this size the O(n³r) cross-term scan is skipped.
pub const CROSS_TERM_MAX_N: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub n: usize,
    pub r: usize,
    /// (n / 2r) · max_{i<j} ‖uᵢ − uⱼ‖².
    pub nu: f64,
    /// The same quantity from whitened points (pᵢ−pⱼ)ᵀ|Λ|⁻¹(pᵢ−pⱼ).
    pub nu_whitened: f64,
    /// ν under the ‖P_U w_α‖_F² ≤ νr/(2n) normalization.
    pub nu_assumption: f64,
    pub max_sq_row_distance: f64,
    pub argmax_pair: IndexPair,
    /// n/(n−1), implied by Σ_{i<j}‖uᵢ−uⱼ‖² = n·r.
    pub lower_bound: f64,
    /// 1 + 2/(n−1), from the (n+1)·r pairwise sum.
    pub lower_bound_stated: f64,
    pub upper_bound: f64,
    /// max over distinct intersecting pairs; None when n > [`CROSS_TERM_MAX_N`].
    pub cross_term_max: Option<f64>,
}

fn row_diff_sq(u: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..u.ncols())
        .map(|k| (u[(i, k)] - u[(j, k)]).powi(2))
        .sum()
}

pub fn incoherence_nu(x: &RankRGram) -> Result<CoherenceReport> {
    let (n, r) = (x.n(), x.r());
    if r == 0 {
        return Err(EdmcError::InvalidInput(
            "incoherence of a rank-0 Gram".into(),
        ));
    }
    if n < 2 {
        return Err(EdmcError::InvalidInput("incoherence needs n >= 2".into()));
    }
    let u = x.u();
    let mut best = (f64::NEG_INFINITY, IndexPair { i: 0, j: 1 });
    for a in all_pairs(n) {
        let d = row_diff_sq(u, a.i, a.j);
        if d > best.0 {
            best = (d, a);
        }
    }

    let abs_l = x.lambda().map(f64::abs);
    let pts = u * DMatrix::from_diagonal(&abs_l.map(f64::sqrt));
    let mut whitened_max = 0.0_f64;
    for a in all_pairs(n) {
        let w: f64 = (0..r)
            .filter(|&k| abs_l[k] > 0.0)
            .map(|k| (pts[(a.i, k)] - pts[(a.j, k)]).powi(2) / abs_l[k])
            .sum();
        whitened_max = whitened_max.max(w);
    }

    let scale = n as f64 / (2.0 * r as f64);
    let nu = scale * best.0;
    Ok(CoherenceReport {
        n,
        r,
        nu,
        nu_whitened: scale * whitened_max,
        nu_assumption: ASSUMPTION_NU_FACTOR * nu,
        max_sq_row_distance: best.0,
        argmax_pair: best.1,
        lower_bound: n as f64 / (n as f64 - 1.0),
        lower_bound_stated: 1.0 + 2.0 / (n as f64 - 1.0),
        upper_bound: 2.0 * n as f64 / r as f64,
        cross_term_max: (n <= CROSS_TERM_MAX_N).then(|| max_cross_term(u)),
    })
}

fn max_cross_term(u: &DMatrix<f64>) -> f64 {
    let n = u.nrows();
    let mut best = 0.0_f64;
    for i in 0..n {
        let mut d = u.clone();
        for mut row in d.row_iter_mut() {
            row -= u.row(i);
        }
        let g = &d * d.transpose();
        for j in 0..n {
            for k in (j + 1)..n {
                if j != i && k != i {
                    best = best.max(g[(j, k)].abs());
                }
            }
        }
    }
    best
}

fn basis_overlap(a: IndexPair, b: IndexPair) -> f64 {
    let e = |p: IndexPair, k: usize| (p.i == k) as i32 as f64 - (p.j == k) as i32 as f64;
    [a.i, a.j]
        .iter()
        .filter(|&&k| k == b.i || k == b.j)
        .map(|&k| e(a, k) * e(b, k))
        .sum()
}

/// ⟨P_U w_α, P_U w_β⟩.
pub fn cross_coherence(x: &RankRGram, alpha: IndexPair, beta: IndexPair) -> Result<f64> {
    alpha.check(x.n())?;
    beta.check(x.n())?;
    let s = basis_overlap(alpha, beta);
    if s == 0.0 {
        return Ok(0.0);
    }
    let u = x.u();
    let dot: f64 = (0..x.r())
        .map(|k| (u[(alpha.i, k)] - u[(alpha.j, k)]) * (u[(beta.i, k)] - u[(beta.j, k)]))
        .sum();
    Ok(s * dot)
}

/// Power-iteration outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    /// The iteration cap was hit before the residual tolerance.
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// H̃ x as a vector over all pairs: ⟨w_α, UUᵀ Σ_β x_β w_β⟩.
fn htilde_apply(u: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = u.nrows();
    let mut y = DMatrix::zeros(n, n);
    for (a, &v) in all_pairs(n).zip(x) {
        y[(a.i, a.i)] += v;
        y[(a.j, a.j)] += v;
        y[(a.i, a.j)] -= v;
        y[(a.j, a.i)] -= v;
    }
    let z = u * (u.transpose() * y);
    all_pairs(n)
        .map(|a| z[(a.i, a.i)] + z[(a.j, a.j)] - z[(a.i, a.j)] - z[(a.j, a.i)])
        .collect()
}

/// λ_max(H̃), matrix-free; H̃ is PSD so plain power iteration applies.
pub fn htilde_lambda_max(x: &RankRGram, cfg: &PowerConfig) -> SpectralEstimate {
    let n = x.n();
    if x.r() == 0 || n < 2 {
        return SpectralEstimate {
            value: 0.0,
            residual: 0.0,
            iterations: 0,
            approximate: false,
        };
    }
    let mut rng = stream_rng(cfg.seed, Stream::PowerIteration);
    let mut v: Vec<f64> = all_pairs(n).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    power_loop(cfg, &mut v, |v| htilde_apply(x.u(), v))
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|a| *a /= nrm);
    }
    nrm
}

fn power_loop<F: Fn(&[f64]) -> Vec<f64>>(
    cfg: &PowerConfig,
    v: &mut Vec<f64>,
    op: F,
) -> SpectralEstimate {
    let mut est = SpectralEstimate {
        value: 0.0,
        residual: f64::INFINITY,
        iterations: 0,
        approximate: true,
    };
    for it in 1..=cfg.max_iters {
        let av = op(v);
        let mu: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
        let res = av
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - mu * b).powi(2))
            .sum::<f64>()
            .sqrt();
        est = SpectralEstimate {
            value: mu,
            residual: res,
            iterations: it,
            approximate: true,
        };
        if res <= cfg.tol * mu.abs().max(1.0) {
            est.approximate = false;
            break;
        }
        *v = av;
        if normalize(v) == 0.0 {
            est.approximate = false;
            break;
        }
    }
    est
}

/// Dense H̃ for small n.
pub fn htilde_dense(x: &RankRGram) -> DMatrix<f64> {
    let pairs: Vec<IndexPair> = all_pairs(x.n()).collect();
    DMatrix::from_fn(pairs.len(), pairs.len(), |a, b| {
        cross_coherence(x, pairs[a], pairs[b]).expect("valid pairs")
    })
}

/// ε = p⁻² ‖P_T M_Ω P_T − p² P_T‖ on the tangent space at `x`.
///
/// Power iteration runs on the square of the self-adjoint operator so that
/// eigenvalues of either sign are found; the value returned is the square
/// root of the dominant eigenvalue of the square.
pub fn rip_estimate(
    x: &RankRGram,
    omega: &IndexSet,
    p: f64,
    cfg: &PowerConfig,
) -> Result<SpectralEstimate> {
    if omega.n() != x.n() {
        return Err(EdmcError::ShapeMismatch(
            "sample and Gram sizes differ".into(),
        ));
    }
    let p2 = p * p;
    let apply = |t: &TangentVector| -> Result<TangentVector> {
        let c = t.w_coefficients(omega);
        let g = m_omega_coeffs(omega, &c, p)?;
        let pm = project_tangent(x, &WExpansion { omega, coeffs: &g })?;
        Ok(pm.axpy(-p2, t).scaled(1.0 / p2))
    };

    let mut rng = stream_rng(cfg.seed, Stream::PowerIteration);
    let n = x.n();
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let start = DenseSym::from_upper(linalg::double_center(&(&g + g.transpose())))?;
    let mut v = project_tangent(x, &start)?;
    if v.norm() == 0.0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            residual: 0.0,
            iterations: 0,
            approximate: false,
        });
    }
    v = v.scaled(1.0 / v.norm());

    let mut est = SpectralEstimate {
        value: 0.0,
        residual: f64::INFINITY,
        iterations: 0,
        approximate: true,
    };
    for it in 1..=cfg.max_iters {
        let av = apply(&v)?;
        let aav = apply(&av)?;
        let mu = v.inner(&aav);
        let res = aav.axpy(-mu, &v).norm();
        est = SpectralEstimate {
            value: mu.max(0.0).sqrt(),
            residual: res,
            iterations: it,
            approximate: true,
        };
        let nrm = aav.norm();
        if res <= cfg.tol * mu.abs().max(1.0) || nrm == 0.0 {
            est.approximate = false;
            break;
        }
        v = aav.scaled(1.0 / nrm);
    }
    Ok(est)
}

/// Σ_{i<j} ‖uᵢ − uⱼ‖².
pub fn pairwise_sum_identity_check(x: &RankRGram) -> f64 {
    let u = x.u();
    all_pairs(x.n()).map(|a| row_diff_sq(u, a.i, a.j)).sum()
}

/// Row-sum bound max_α Σ_β |H̃_αβ| on λ_max(H̃).
pub fn htilde_gershgorin(x: &RankRGram) -> f64 {
    let h = htilde_dense(x);
    h.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Right-hand side of the one-step initialization bound, relative to ‖X‖_F:
/// √(β ν² r³ log n / (24 p n)) · ‖X‖ / ‖X‖_F.
pub fn init_error_bound(nu: f64, n: usize, r: usize, p: f64, beta: f64, x: &RankRGram) -> f64 {
    let spec = x.lambda().iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let nf = n as f64;
    (beta * nu * nu * (r as f64).powi(3) * nf.ln() / (24.0 * p * nf)).sqrt() * spec / x.fro_norm()
}

/// Equilateral-triangle frame: centered orthonormal U for n = 3, r = 2.
pub fn triangle_frame() -> RankRGram {
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    let u = DMatrix::from_row_slice(
        3,
        2,
        &[1.0 / s2, 1.0 / s6, -1.0 / s2, 1.0 / s6, 0.0, -2.0 / s6],
    );
    RankRGram::new(u, DVector::from_element(2, 1.0)).expect("finite")
}
