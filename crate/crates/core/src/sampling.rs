//! Index sets over the strict upper triangle, observation of squared
//! distances, and the bounded point-noise model.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dualbasis::WInner;
use crate::error::{EdmcError, Result};
use crate::geometry::{DenseSym, PointCloud};
use crate::rng::{stream_rng, Stream};

/// A strictly upper-triangular index pair (0-based, i < j).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexPair {
    pub i: usize,
    pub j: usize,
}

impl IndexPair {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i >= j {
            return Err(EdmcError::InvalidInput(format!(
                "index pair ({i}, {j}) is not strictly upper triangular"
            )));
        }
        Ok(IndexPair { i, j })
    }

    /// Orders the two indices; fails only when they coincide.
    pub fn unordered(a: usize, b: usize) -> Result<Self> {
        Self::new(a.min(b), a.max(b))
    }

    pub fn intersects(&self, other: &IndexPair) -> bool {
        self.i == other.i || self.i == other.j || self.j == other.i || self.j == other.j
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.i >= self.j || self.j >= n {
            return Err(EdmcError::IndexOutOfRange {
                i: self.i,
                j: self.j,
                n,
            });
        }
        Ok(())
    }
}

/// L = n(n−1)/2.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of (i, j) in lexicographic order over the full index set.
pub fn pair_rank(n: usize, a: IndexPair) -> usize {
    a.i * (2 * n - a.i - 1) / 2 + (a.j - a.i - 1)
}

pub fn all_pairs(n: usize) -> impl Iterator<Item = IndexPair> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| IndexPair { i, j }))
}

/// Sorted, duplicate-free subset of the strict upper triangle of an n×n matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    n: usize,
    pairs: Vec<IndexPair>,
}

impl IndexSet {
    /// Sorts and validates; duplicates are rejected.
    pub fn new(n: usize, mut pairs: Vec<IndexPair>) -> Result<Self> {
        for a in &pairs {
            a.check(n)?;
        }
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(EdmcError::InvalidInput("duplicate index pair".into()));
        }
        Ok(IndexSet { n, pairs })
    }

    pub fn full(n: usize) -> Self {
        IndexSet {
            n,
            pairs: all_pairs(n).collect(),
        }
    }

    pub fn empty(n: usize) -> Self {
        IndexSet {
            n,
            pairs: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[IndexPair] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, IndexPair> {
        self.pairs.iter()
    }

    pub fn contains(&self, a: &IndexPair) -> bool {
        self.pairs.binary_search(a).is_ok()
    }

    /// m / L.
    pub fn empirical_rate(&self) -> f64 {
        let l = pair_count(self.n);
        if l == 0 {
            0.0
        } else {
            self.len() as f64 / l as f64
        }
    }
}

/// Includes each of the L pairs independently with probability p.
pub fn bernoulli_sample(n: usize, p: f64, seed: u64) -> Result<IndexSet> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(EdmcError::InvalidProbability(p));
    }
    let mut rng = stream_rng(seed, Stream::Sampling);
    let pairs = all_pairs(n).filter(|_| rng.random::<f64>() < p).collect();
    Ok(IndexSet { n, pairs })
}

/// Observed squared distances d_α = ⟨X, w_α⟩ on an index set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDistances {
    omega: IndexSet,
    values: Vec<f64>,
    p: f64,
    seed: Option<u64>,
}

impl SampledDistances {
    /// `p` defaults to the empirical rate m/L when `None`.
    pub fn new(
        omega: IndexSet,
        values: Vec<f64>,
        p: Option<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(EdmcError::ShapeMismatch(format!(
                "{} pairs but {} values",
                omega.len(),
                values.len()
            )));
        }
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if values.iter().any(|v| !v.is_finite() || *v < -1e-12 * scale) {
            return Err(EdmcError::InvalidInput(
                "squared distances must be finite and nonnegative".into(),
            ));
        }
        let p = p.unwrap_or_else(|| omega.empirical_rate());
        if !(0.0..=1.0).contains(&p) {
            return Err(EdmcError::InvalidProbability(p));
        }
        Ok(SampledDistances {
            omega,
            values,
            p,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.omega.n()
    }

    pub fn omega(&self) -> &IndexSet {
        &self.omega
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(EdmcError::InvalidProbability(p));
        }
        self.p = p;
        Ok(self)
    }

    /// Hollow symmetric matrix holding the observations on Ω ∪ Ωᵀ.
    pub fn to_dense(&self) -> DenseSym {
        let n = self.n();
        let mut d = DMatrix::zeros(n, n);
        for (a, v) in self.omega.iter().zip(&self.values) {
            d[(a.i, a.j)] = *v;
            d[(a.j, a.i)] = *v;
        }
        DenseSym::from_upper(d).expect("finite by construction")
    }
}

/// values_α = X_ii + X_jj − 2X_ij for each α in Ω.
pub fn observe<X: WInner + ?Sized>(x: &X, omega: &IndexSet) -> Result<SampledDistances> {
    if x.dim() != omega.n() {
        return Err(EdmcError::ShapeMismatch(format!(
            "matrix is {}x{} but index set is over n = {}",
            x.dim(),
            x.dim(),
            omega.n()
        )));
    }
    let values: Vec<f64> = omega.iter().map(|a| x.w_inner(*a)).collect();
    // Roundoff can push a tiny distance below zero; clamp those.
    let values = values
        .into_iter()
        .map(|v| if v < 0.0 && v > -1e-12 { 0.0 } else { v })
        .collect();
    SampledDistances::new(omega.clone(), values, None, None)
}

/// Bounded i.i.d. uniform noise on the point coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub bound: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(bound: f64, seed: u64) -> Result<Self> {
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(EdmcError::InvalidInput(format!(
                "noise bound {bound} must be >= 0"
            )));
        }
        Ok(NoiseSpec { bound, seed })
    }

    /// bound = 10^γ.
    pub fn from_exponent(gamma: f64, seed: u64) -> Result<Self> {
        Self::new(10f64.powf(gamma), seed)
    }
}

/// The noise matrix N with entries uniform on [−bound, bound].
pub fn noise_matrix(n: usize, r: usize, spec: &NoiseSpec) -> DMatrix<f64> {
    if spec.bound == 0.0 {
        return DMatrix::zeros(n, r);
    }
    let mut rng = stream_rng(spec.seed, Stream::Noise);
    let b = spec.bound;
    // Row-major draw order so the matrix does not depend on storage layout.
    let mut m = DMatrix::zeros(n, r);
    for i in 0..n {
        for k in 0..r {
            m[(i, k)] = rng.random_range(-b..=b);
        }
    }
    m
}

/// P̂ = P + N.
pub fn perturb_points(p: &PointCloud, spec: &NoiseSpec) -> PointCloud {
    let noise = noise_matrix(p.n(), p.r(), spec);
    PointCloud::new(p.coords() + noise).expect("finite noise")
}

fn dof(n: usize, r: usize) -> Result<f64> {
    let d = (n * r) as f64 - (r * r.saturating_sub(1)) as f64 / 2.0;
    if d <= 0.0 {
        return Err(EdmcError::DegenerateDenominator { n, r });
    }
    Ok(d)
}

/// ρ = pL / (nr − r(r−1)/2).
pub fn oversampling_ratio(n: usize, r: usize, p: f64) -> Result<f64> {
    Ok(p * pair_count(n) as f64 / dof(n, r)?)
}

/// Inverse of [`oversampling_ratio`]; the result may exceed 1 for large ρ.
pub fn probability_for_ratio(n: usize, r: usize, rho: f64) -> Result<f64> {
    let l = pair_count(n);
    if l == 0 {
        return Err(EdmcError::DegenerateDenominator { n, r });
    }
    Ok(rho * dof(n, r)? / l as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub n: usize,
    pub p: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    i: usize,
    j: usize,
    d: f64,
}

/// CSV with columns (i, j, d); indices are 0-based.
pub fn write_samples_csv<W: Write>(s: &SampledDistances, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["i", "j", "d"])?;
    for (a, v) in s.omega.iter().zip(&s.values) {
        w.write_record([a.i.to_string(), a.j.to_string(), format!("{v:?}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(reader: R, sidecar: &SampleSidecar) -> Result<SampledDistances> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows: Vec<SampleRow> = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    rows.sort_by_key(|r| (r.i, r.j));
    let pairs = rows
        .iter()
        .map(|r| IndexPair::new(r.i, r.j))
        .collect::<Result<Vec<_>>>()?;
    let omega = IndexSet::new(sidecar.n, pairs)?;
    let values = rows.iter().map(|r| r.d).collect();
    SampledDistances::new(omega, values, Some(sidecar.p), sidecar.seed)
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_samples(s: &SampledDistances, stem: &Path) -> Result<()> {
    write_samples_csv(s, std::fs::File::create(stem.with_extension("csv"))?)?;
    let side = SampleSidecar {
        n: s.n(),
        p: s.p,
        seed: s.seed,
    };
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&side)?,
    )?;
    Ok(())
}

pub fn read_samples(stem: &Path) -> Result<SampledDistances> {
    let side: SampleSidecar =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    read_samples_csv(std::fs::File::open(stem.with_extension("csv"))?, &side)
}

/// Samples Ω ~ Bernoulli(p) and observes the distances of `x`, recording p and seed.
pub fn sample_and_observe<X: WInner + ?Sized>(
    x: &X,
    p: f64,
    seed: u64,
) -> Result<SampledDistances> {
    let omega = bernoulli_sample(x.dim(), p, seed)?;
    let obs = observe(x, &omega)?;
    Ok(SampledDistances {
        p,
        seed: Some(seed),
        ..obs
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distances_from_gram, gram_from_points};

    fn two_point() -> DenseSym {
        DenseSym::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap()
    }

    #[test]
    fn bernoulli_extremes() {
        assert_eq!(bernoulli_sample(20, 1.0, 3).unwrap().len(), 190);
        assert!(bernoulli_sample(20, 0.0, 3).unwrap().is_empty());
        assert!(matches!(
            bernoulli_sample(20, 1.5, 3),
            Err(EdmcError::InvalidProbability(_))
        ));
        assert!(bernoulli_sample(20, -0.1, 3).is_err());
    }

    #[test]
    fn bernoulli_is_reproducible_and_sorted() {
        let a = bernoulli_sample(50, 0.3, 17).unwrap();
        let b = bernoulli_sample(50, 0.3, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.pairs().windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, bernoulli_sample(50, 0.3, 18).unwrap());
    }

    #[test]
    fn bernoulli_rate_monte_carlo() {
        let n = 100;
        let l = pair_count(n) as f64;
        let p = 0.1;
        let seeds = 10_000;
        let mean = (0..seeds)
            .map(|s| bernoulli_sample(n, p, s).unwrap().len() as f64 / l)
            .sum::<f64>()
            / seeds as f64;
        let se = (p * (1.0 - p) / l / seeds as f64).sqrt();
        assert!((mean - p).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn pair_rank_is_lexicographic() {
        for (k, a) in all_pairs(7).enumerate() {
            assert_eq!(pair_rank(7, a), k);
        }
    }

    #[test]
    fn observe_examples() {
        let x = two_point();
        let omega = IndexSet::new(2, vec![IndexPair::new(0, 1).unwrap()]).unwrap();
        assert_eq!(observe(&x, &omega).unwrap().values(), &[4.0]);
        assert!(observe(&x, &IndexSet::empty(2))
            .unwrap()
            .values()
            .is_empty());
        let wrong = IndexSet::full(3);
        assert!(observe(&x, &wrong).is_err());
    }

    #[test]
    fn observe_full_matches_distance_matrix() {
        let p = PointCloud::from_rows(&[
            vec![0.3, 1.0],
            vec![-1.2, 0.4],
            vec![0.5, -0.7],
            vec![2.0, 0.1],
            vec![-0.4, -1.1],
        ])
        .unwrap();
        let x = gram_from_points(&p).unwrap();
        let s = observe(&x, &IndexSet::full(5)).unwrap();
        let diff = s.to_dense().matrix() - distances_from_gram(&x).matrix();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn index_validation() {
        assert!(IndexPair::new(2, 2).is_err());
        assert!(IndexPair::new(3, 1).is_err());
        assert!(IndexSet::new(3, vec![IndexPair { i: 1, j: 3 }]).is_err());
        let a = IndexPair::new(0, 1).unwrap();
        assert!(IndexSet::new(3, vec![a, a]).is_err());
    }

    #[test]
    fn noise_examples() {
        let p = PointCloud::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(perturb_points(&p, &NoiseSpec::new(0.0, 1).unwrap()), p);
        assert!(NoiseSpec::new(-1.0, 1).is_err());

        let n = noise_matrix(100, 3, &NoiseSpec::new(1e-2, 5).unwrap());
        assert!(n.amax() <= 1e-2);

        let b = 0.5;
        let big = noise_matrix(100_000, 3, &NoiseSpec::new(b, 9).unwrap());
        let bound = 3.0 * b / (3.0 * 1e5_f64).sqrt();
        for c in big.column_iter() {
            assert!((c.sum() / 1e5).abs() <= bound);
        }
    }

    #[test]
    fn oversampling_examples() {
        let l = pair_count(100) as f64;
        let p = probability_for_ratio(100, 2, 1.0).unwrap();
        assert!((p * l - 199.0).abs() < 1e-9);
        assert!((oversampling_ratio(100, 2, p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(oversampling_ratio(100, 3, 0.0).unwrap(), 0.0);
        assert!((oversampling_ratio(100, 10, 1.0).unwrap() - 4950.0 / 955.0).abs() < 1e-12);
        assert!(oversampling_ratio(0, 2, 0.5).is_err());
    }

    #[test]
    fn sample_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = two_point();
        let s = sample_and_observe(&x, 1.0, 4).unwrap();
        let stem = dir.path().join("obs");
        write_samples(&s, &stem).unwrap();
        let back = read_samples(&stem).unwrap();
        assert_eq!(back, s);
    }
}
