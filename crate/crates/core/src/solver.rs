//! Riemannian gradient descent with the de-biased dual-basis operator and
//! the one-step hard-thresholding initialization.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dualbasis::{m_omega_coeffs, r_omega_apply, rstar_r_coeffs, WInner};
use crate::error::{EdmcError, Result};
use crate::geometry::{PointCloud, RankRGram, EMBED_TOL};
use crate::manifold::{
    hard_threshold, project_tangent, retract_structured, TangentVector, WExpansion,
};
use crate::sampling::{IndexSet, SampledDistances};

/// Default RIP level used to flag unusual step sizes.
pub const DEFAULT_STEP_EPS: f64 = 1.0 / 22.0;

/// Observed distances together with the sampling rate and target rank.
#[derive(Debug, Clone)]
pub struct Problem {
    data: SampledDistances,
    p: f64,
    r: usize,
}

impl Problem {
    /// Uses the sampling rate recorded in `data` (m/L when it was not known).
    pub fn new(data: SampledDistances, r: usize) -> Result<Self> {
        let p = data.p();
        Self::with_p(data, p, r)
    }

    pub fn with_p(data: SampledDistances, p: f64, r: usize) -> Result<Self> {
        if r == 0 || r > data.n() {
            return Err(EdmcError::InvalidInput(format!(
                "target rank {r} invalid for n = {}",
                data.n()
            )));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(EdmcError::InvalidProbability(p));
        }
        Ok(Problem { data, p, r })
    }

    pub fn data(&self) -> &SampledDistances {
        &self.data
    }

    pub fn omega(&self) -> &IndexSet {
        self.data.omega()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// d_α − ⟨X, w_α⟩ on Ω.
    pub fn residual<X: WInner + ?Sized>(&self, x: &X) -> Vec<f64> {
        self.omega()
            .iter()
            .zip(self.data.values())
            .map(|(a, d)| d - x.w_inner(*a))
            .collect()
    }
}

/// X₀ = p⁻¹ ℋ_r(R_Ω(X)).
pub fn init_one_step(prob: &Problem) -> Result<RankRGram> {
    if prob.omega().is_empty() {
        return Err(EdmcError::DegenerateInit("no observed distances".into()));
    }
    let r_img = r_omega_apply(prob.omega(), prob.data.values());
    let th = hard_threshold(&r_img, prob.r);
    if th.rank_deficient {
        return Err(EdmcError::DegenerateInit(format!(
            "R_Omega(X) has rank below {}",
            prob.r
        )));
    }
    let lambda = th.gram.lambda() / prob.p;
    RankRGram::new(th.gram.u().clone(), lambda)
}

/// Self-adjoint operator driving the gradient and the step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingOperator {
    /// M_Ω, with E[M_Ω] = p²·I.
    #[default]
    Debiased,
    /// R*_ΩR_Ω: positive semidefinite but biased.
    Unscaled,
}

impl SamplingOperator {
    /// w-expansion coefficients on Ω of the operator applied to a matrix
    /// whose coefficients are `coeffs`.
    pub fn apply_coeffs(self, omega: &IndexSet, coeffs: &[f64], p: f64) -> Result<Vec<f64>> {
        match self {
            SamplingOperator::Debiased => m_omega_coeffs(omega, coeffs, p),
            SamplingOperator::Unscaled => Ok(rstar_r_coeffs(omega, coeffs)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once ‖X_{l+1} − X_l‖_F / ‖X_l‖_F falls below this.
    pub rel_change_tol: f64,
    /// ε used for the step-size sanity band [p⁻²/(1+4ε), p⁻²/(1−4ε)].
    #[serde(default = "default_step_eps")]
    pub step_eps: f64,
    /// Abort when the truth error exceeds this multiple of its initial value.
    #[serde(default = "default_divergence_factor")]
    pub divergence_factor: f64,
    #[serde(default)]
    pub operator: SamplingOperator,
    /// Ground truth for per-iteration error tracking.
    #[serde(skip)]
    pub truth: Option<RankRGram>,
}

fn default_step_eps() -> f64 {
    DEFAULT_STEP_EPS
}

fn default_divergence_factor() -> f64 {
    1e3
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 1000,
            rel_change_tol: 1e-5,
            step_eps: DEFAULT_STEP_EPS,
            divergence_factor: default_divergence_factor(),
            operator: SamplingOperator::Debiased,
            truth: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(EdmcError::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.rel_change_tol > 0.0) {
            return Err(EdmcError::InvalidInput("rel_change_tol must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_truth(mut self, truth: RankRGram) -> Self {
        self.truth = Some(truth);
        self
    }
}

/// Exact step size and whether it fell inside the sanity band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub value: f64,
    pub in_band: bool,
}

/// α = ‖G_T‖_F² / ⟨G_T, M_Ω G_T⟩ for a tangent direction G_T.
pub fn step_size(g: &TangentVector, omega: &IndexSet, p: f64, eps: f64) -> Result<StepSize> {
    step_size_with(SamplingOperator::Debiased, g, omega, p, eps)
}

/// [`step_size`] with the quotient taken against `op`.
pub fn step_size_with(
    op: SamplingOperator,
    g: &TangentVector,
    omega: &IndexSet,
    p: f64,
    eps: f64,
) -> Result<StepSize> {
    let num = g.norm_sq();
    let e = g.w_coefficients(omega);
    let me = op.apply_coeffs(omega, &e, p)?;
    let denom: f64 = e.iter().zip(&me).map(|(a, b)| a * b).sum();
    if !(denom > 0.0) || !(num > 0.0) {
        return Err(EdmcError::DegenerateStep { denominator: denom });
    }
    let value = num / denom;
    let p2 = p * p;
    let lo = 1.0 / (p2 * (1.0 + 4.0 * eps));
    let hi = if 4.0 * eps < 1.0 {
        1.0 / (p2 * (1.0 - 4.0 * eps))
    } else {
        f64::INFINITY
    };
    Ok(StepSize {
        value,
        in_band: value >= lo && value <= hi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// None when the gradient vanished and no step was taken.
    pub step_size: Option<f64>,
    pub step_in_band: Option<bool>,
    /// ‖(d_α − ⟨X_l, w_α⟩)_α‖₂.
    pub residual_norm: f64,
    pub rel_change: f64,
    pub rel_truth_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// Zero/negative step denominator or rank collapse.
    Degenerate(String),
    /// Truth error grew beyond the divergence guard.
    Diverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub initial_rel_truth_error: Option<f64>,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_rel_truth_error(&self) -> Option<f64> {
        self.records
            .last()
            .and_then(|r| r.rel_truth_error)
            .or(self.initial_rel_truth_error)
    }

    /// One JSON object per iteration, then `{"summary": ...}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W, meta: &serde_json::Value) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        let summary = serde_json::json!({
            "summary": {
                "status": self.status,
                "iterations": self.iterations(),
                "initial_rel_truth_error": self.initial_rel_truth_error,
                "final_rel_truth_error": self.final_rel_truth_error(),
                "meta": meta,
            }
        });
        serde_json::to_writer(&mut w, &summary)?;
        writeln!(w)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: RankRGram,
    pub trace: SolverTrace,
}

fn truth_error(x: &RankRGram, truth: Option<&RankRGram>) -> Option<f64> {
    truth.map(|t| x.distance(t) / t.fro_norm())
}

/// Runs the iteration X_{l+1} = ℋ_r(X_l + α_l P_T M_Ω(X − X_l)) from `x0`.
pub fn dbre_solve(prob: &Problem, x0: RankRGram, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    if x0.n() != prob.n() || x0.r() != prob.r() {
        return Err(EdmcError::ShapeMismatch(format!(
            "initial point is {}x rank {}, problem is {} x rank {}",
            x0.n(),
            x0.r(),
            prob.n(),
            prob.r()
        )));
    }
    let omega = prob.omega();
    let truth = cfg.truth.as_ref();
    let initial = truth_error(&x0, truth);
    let mut x = x0;
    let mut records = Vec::new();
    let mut status = SolveStatus::MaxIters;

    for iter in 0..cfg.max_iters {
        let resid = prob.residual(&x);
        let residual_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g = cfg.operator.apply_coeffs(omega, &resid, prob.p)?;
        let tangent = project_tangent(&x, &WExpansion { omega, coeffs: &g })?;

        if tangent.norm_sq() == 0.0 {
            records.push(IterationRecord {
                iter,
                step_size: None,
                step_in_band: None,
                residual_norm,
                rel_change: 0.0,
                rel_truth_error: truth_error(&x, truth),
            });
            status = SolveStatus::Converged;
            break;
        }

        let step = match step_size_with(cfg.operator, &tangent, omega, prob.p, cfg.step_eps) {
            Ok(s) => s,
            Err(e) => {
                status = SolveStatus::Degenerate(e.to_string());
                break;
            }
        };
        let retraction = match retract_structured(&x, &tangent, step.value) {
            Ok(r) => r,
            Err(e) => {
                status = SolveStatus::Degenerate(e.to_string());
                break;
            }
        };
        let rel_change = retraction.change / x.fro_norm();
        x = retraction.gram;
        let err = truth_error(&x, truth);
        records.push(IterationRecord {
            iter,
            step_size: Some(step.value),
            step_in_band: Some(step.in_band),
            residual_norm,
            rel_change,
            rel_truth_error: err,
        });
        if let (Some(e), Some(e0)) = (err, initial) {
            if !e.is_finite() || e > cfg.divergence_factor * e0.max(f64::MIN_POSITIVE) {
                status = SolveStatus::Diverged;
                break;
            }
        }
        if rel_change < cfg.rel_change_tol {
            status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        x,
        trace: SolverTrace {
            records,
            status,
            initial_rel_truth_error: initial,
        },
    })
}

/// Points recovered from a factored Gram, with clamping diagnostics.
#[derive(Debug, Clone)]
pub struct RecoveredPoints {
    pub points: PointCloud,
    /// Some eigenvalue was negative and clamped to zero.
    pub clamped: bool,
    /// Some eigenvalue was negative beyond roundoff tolerance.
    pub not_psd: bool,
}

/// P = U Λ^{1/2}, negative eigenvalues clamped to zero.
pub fn recover_points(x: &RankRGram) -> RecoveredPoints {
    let scale = x.lambda().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let clamped = x.lambda().iter().any(|&l| l < 0.0);
    let not_psd = x.lambda().iter().any(|&l| l < -EMBED_TOL * scale);
    let sqrt = x.lambda().map(|l| l.max(0.0).sqrt());
    let coords = x.u() * DMatrix::from_diagonal(&sqrt);
    RecoveredPoints {
        points: PointCloud::new(coords).expect("finite factors"),
        clamped,
        not_psd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{factored_gram_from_points, gram_from_points, procrustes_error};
    use crate::sampling::{observe, sample_and_observe};
    use crate::synthdata::{generate, DatasetSpec};
    use crate::testutil::random_centered_gram;
    use nalgebra::DVector;

    fn full_problem(x: &RankRGram) -> Problem {
        let data = observe(x, &IndexSet::full(x.n()))
            .unwrap()
            .with_p(1.0)
            .unwrap();
        Problem::new(data, x.r()).unwrap()
    }

    #[test]
    fn full_sampling_init_is_exact() {
        let x = random_centered_gram(15, 3, 1);
        let x0 = init_one_step(&full_problem(&x)).unwrap();
        assert!(x0.distance(&x) < 1e-12 * x.fro_norm());
    }

    #[test]
    fn empty_sample_fails_init() {
        let x = random_centered_gram(6, 2, 2);
        let data = observe(&x, &IndexSet::empty(6)).unwrap();
        let prob = Problem::with_p(data, 0.5, 2).unwrap();
        assert!(matches!(
            init_one_step(&prob),
            Err(EdmcError::DegenerateInit(_))
        ));
    }

    #[test]
    fn solve_from_truth_stops_immediately() {
        let x = random_centered_gram(12, 2, 3);
        let prob = full_problem(&x);
        let cfg = SolverConfig::default().with_truth(x.clone());
        let out = dbre_solve(&prob, x.clone(), &cfg).unwrap();
        assert_eq!(out.trace.status, SolveStatus::Converged);
        assert_eq!(out.trace.iterations(), 1);
        let rec = &out.trace.records[0];
        assert!(rec.rel_change < 1e-12);
        if let Some(a) = rec.step_size {
            assert!((a - 1.0).abs() < 1e-6, "step {a}");
        }
        assert!(out.x.distance(&x) < 1e-12 * x.fro_norm());
    }

    #[test]
    fn full_sampling_step_is_one() {
        let x = random_centered_gram(10, 2, 4);
        let omega = IndexSet::full(10);
        let t = project_tangent(&x, &crate::testutil::random_centered_sym(10, 5)).unwrap();
        let s = step_size(&t, &omega, 1.0, DEFAULT_STEP_EPS).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!(s.in_band);
        let scaled = step_size(&t.scaled(-3.7), &omega, 1.0, DEFAULT_STEP_EPS).unwrap();
        assert!((scaled.value - s.value).abs() < 1e-12);
        assert!(step_size(&TangentVector::zero(&x), &omega, 1.0, 0.1).is_err());
    }

    fn recover(
        n: usize,
        p: f64,
        seed: u64,
        operator: SamplingOperator,
    ) -> (PointCloud, SolveResult) {
        let pts = generate(&DatasetSpec::sphere(n, 3, seed)).unwrap();
        let truth = factored_gram_from_points(&pts).unwrap();
        let data = sample_and_observe(&gram_from_points(&pts).unwrap(), p, seed).unwrap();
        let prob = Problem::new(data, 3).unwrap();
        let x0 = init_one_step(&prob).unwrap();
        let cfg = SolverConfig {
            operator,
            ..SolverConfig::default().with_truth(truth)
        };
        (pts, dbre_solve(&prob, x0, &cfg).unwrap())
    }

    #[test]
    fn dense_sampling_recovers_points() {
        let (pts, out) = recover(120, 0.8, 7, SamplingOperator::Debiased);
        assert_eq!(out.trace.status, SolveStatus::Converged);
        assert!(out.trace.final_rel_truth_error().unwrap() < 1e-4);
        let rec = recover_points(&out.x);
        assert!(!rec.not_psd);
        assert!(procrustes_error(&rec.points, &pts).unwrap() <= 1e-5 * pts.coords().norm());
        assert!(out.x.orthonormality_defect() < 1e-10);
        assert!(out.x.centering_defect() < 1e-6);
    }

    #[test]
    fn unscaled_operator_recovers_at_lower_rate() {
        let (_, out) = recover(120, 0.4, 7, SamplingOperator::Unscaled);
        assert_eq!(out.trace.status, SolveStatus::Converged);
        assert!(out.trace.final_rel_truth_error().unwrap() < 1e-3);
    }

    #[test]
    fn solve_is_deterministic() {
        let p = generate(&DatasetSpec::sphere(60, 2, 3)).unwrap();
        let data = sample_and_observe(&gram_from_points(&p).unwrap(), 0.5, 3).unwrap();
        let prob = Problem::new(data, 2).unwrap();
        let run = || {
            let out = dbre_solve(
                &prob,
                init_one_step(&prob).unwrap(),
                &SolverConfig::default(),
            )
            .unwrap();
            serde_json::to_string(&out.trace).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn recover_points_examples() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()]);
        let x = RankRGram::new(u.clone(), DVector::from_vec(vec![2.0])).unwrap();
        let rec = recover_points(&x);
        assert!((rec.points.coords()[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(!rec.clamped);

        let u2 = crate::testutil::centered_orthonormal(5, 2, 1);
        let x = RankRGram::new(u2, DVector::from_vec(vec![1.0, -1e-12])).unwrap();
        let rec = recover_points(&x);
        assert!(rec.clamped && !rec.not_psd);
        let x = RankRGram::new(
            crate::testutil::centered_orthonormal(5, 2, 1),
            DVector::from_vec(vec![1.0, -0.5]),
        )
        .unwrap();
        assert!(recover_points(&x).not_psd);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            rel_change_tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_jsonl_has_summary() {
        let x = random_centered_gram(8, 2, 9);
        let out = dbre_solve(&full_problem(&x), x.clone(), &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        out.trace
            .write_jsonl(&mut buf, &serde_json::json!({"seed": 1}))
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), out.trace.iterations() + 1);
        let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
        assert_eq!(last["summary"]["status"]["status"], "converged");
    }
}
