//! Seeded synthetic point clouds.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{EdmcError, Result};
use crate::geometry::{center_points, read_points_file, PointCloud};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_SWISS_TURNS: f64 = 1.5;
pub const DEFAULT_SWISS_HEIGHT: f64 = 21.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Uniform on the unit sphere S^{r−1}.
    SphereSurface,
    /// (t cos t, h, t sin t) with t over `turns` revolutions starting at 1.5π.
    SwissRoll {
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default = "default_height")]
        height: f64,
    },
    /// Uniform in the unit ball of R^r.
    UnitBallUniform,
    /// Points read from a CSV file.
    File { path: PathBuf },
}

fn default_turns() -> f64 {
    DEFAULT_SWISS_TURNS
}

fn default_height() -> f64 {
    DEFAULT_SWISS_HEIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub n: usize,
    pub r: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn sphere(n: usize, r: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::SphereSurface,
            n,
            r,
            seed,
        }
    }

    pub fn swiss_roll(n: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::SwissRoll {
                turns: DEFAULT_SWISS_TURNS,
                height: DEFAULT_SWISS_HEIGHT,
            },
            n,
            r: 3,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DatasetSpec {
            seed,
            ..self.clone()
        }
    }
}

/// Uncentered draw, before the centering shift.
pub fn generate_raw(spec: &DatasetSpec) -> Result<PointCloud> {
    let (n, r) = (spec.n, spec.r);
    if !matches!(spec.kind, DatasetKind::File { .. }) && (r == 0 || n < r + 1) {
        return Err(EdmcError::InvalidInput(format!(
            "generators need n >= r + 1 and r >= 1 (n = {n}, r = {r})"
        )));
    }
    let mut rng = stream_rng(spec.seed, Stream::Dataset);
    let coords = match &spec.kind {
        DatasetKind::SphereSurface => {
            let mut m = DMatrix::zeros(n, r);
            for i in 0..n {
                let row: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (k, v) in row.into_iter().enumerate() {
                    m[(i, k)] = v / norm;
                }
            }
            m
        }
        DatasetKind::UnitBallUniform => {
            let mut m = DMatrix::zeros(n, r);
            for i in 0..n {
                let row: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let radius = rng.random::<f64>().powf(1.0 / r as f64);
                for (k, v) in row.into_iter().enumerate() {
                    m[(i, k)] = radius * v / norm;
                }
            }
            m
        }
        DatasetKind::SwissRoll { turns, height } => {
            if r != 3 {
                return Err(EdmcError::InvalidInput(
                    "swiss roll is three-dimensional".into(),
                ));
            }
            let start = 1.5 * std::f64::consts::PI;
            let span = 2.0 * std::f64::consts::PI * turns;
            let mut m = DMatrix::zeros(n, 3);
            for i in 0..n {
                let t = start + span * rng.random::<f64>();
                let h = height * rng.random::<f64>();
                m[(i, 0)] = t * t.cos();
                m[(i, 1)] = h;
                m[(i, 2)] = t * t.sin();
            }
            m
        }
        DatasetKind::File { path } => return read_points_file(path),
    };
    PointCloud::new(coords)
}

/// Centered point cloud for the spec; deterministic in the seed.
pub fn generate(spec: &DatasetSpec) -> Result<PointCloud> {
    Ok(center_points(&generate_raw(spec)?))
}
