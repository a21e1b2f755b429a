//! Seeded experiment grids: recovery tables, oversampling transitions and
//! noise sweeps. Each trial owns its RNG streams and solver state, trials run
//! on a rayon pool, and results are merged in cell order so that outputs do
//! not depend on scheduling.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EdmcError, Result};
use crate::geometry::factored_gram_from_points;
use crate::geometry::gram_from_points;
use crate::sampling::{
    bernoulli_sample, observe, oversampling_ratio, perturb_points, probability_for_ratio, NoiseSpec,
};
use crate::solver::{dbre_solve, init_one_step, Problem, SolveStatus, SolverConfig};
use crate::synthdata::{generate, DatasetSpec};

/// Default success threshold on the relative Gram error without noise.
pub const NOISELESS_THRESHOLD: f64 = 1e-3;
/// Default success threshold for noise sweeps.
pub const NOISY_THRESHOLD: f64 = 1e-2;

/// SHA-256 (hex) of the compact JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn version_string() -> String {
    match option_env!("EDMC_GIT_DESCRIBE") {
        Some(d) => format!("edmc {} ({d})", env!("CARGO_PKG_VERSION")),
        None => format!("edmc {}", env!("CARGO_PKG_VERSION")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    /// Fixed rank, list of Bernoulli rates.
    Probability { p: Vec<f64> },
    /// Rank versus oversampling ratio ρ.
    Oversampling { r: Vec<usize>, rho: Vec<f64> },
    /// Noise exponent γ (bound 10^γ) versus ρ at the dataset's rank.
    Noise { gamma: Vec<f64>, rho: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `n`, kind and ambient dimension; `seed` is ignored in favour of the
    /// per-trial seeds.
    pub dataset: DatasetSpec,
    pub grid: Grid,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 1e-3, or 1e-2 for noise grids.
    #[serde(default)]
    pub success_threshold: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Worker count; None uses rayon's default.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn threshold(&self) -> f64 {
        self.success_threshold.unwrap_or(match self.grid {
            Grid::Noise { .. } => NOISY_THRESHOLD,
            _ => NOISELESS_THRESHOLD,
        })
    }

    /// SHA-256 of the canonical JSON encoding, ignoring the worker count.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            threads: None,
            ..self.clone()
        };
        hash_json(&canonical)
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let n = self.dataset.n;
        let mut cells = Vec::new();
        match &self.grid {
            Grid::Probability { p } => {
                for &p in p {
                    cells.push(Cell {
                        index: cells.len(),
                        r: self.dataset.r,
                        p,
                        rho: oversampling_ratio(n, self.dataset.r, p)?,
                        gamma: None,
                    });
                }
            }
            Grid::Oversampling { r, rho } => {
                for &r in r {
                    for &rho in rho {
                        cells.push(Cell {
                            index: cells.len(),
                            r,
                            p: probability_for_ratio(n, r, rho)?,
                            rho,
                            gamma: None,
                        });
                    }
                }
            }
            Grid::Noise { gamma, rho } => {
                let r = self.dataset.r;
                for &g in gamma {
                    for &rho in rho {
                        cells.push(Cell {
                            index: cells.len(),
                            r,
                            p: probability_for_ratio(n, r, rho)?,
                            rho,
                            gamma: Some(g),
                        });
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(EdmcError::InvalidInput("trials must be >= 1".into()));
        }
        if !(self.threshold() > 0.0) {
            return Err(EdmcError::InvalidInput(
                "success threshold must be > 0".into(),
            ));
        }
        self.solver.validate()?;
        let cells = self.cells()?;
        if cells.is_empty() {
            return Err(EdmcError::InvalidInput("grid is empty".into()));
        }
        for c in &cells {
            if !(c.p > 0.0 && c.p <= 1.0) {
                return Err(EdmcError::InvalidInput(format!(
                    "cell r={} rho={} needs p={} outside (0, 1]",
                    c.r, c.rho, c.p
                )));
            }
            if self.dataset.n < c.r + 1 {
                return Err(EdmcError::InvalidInput(format!(
                    "n = {} too small for r = {}",
                    self.dataset.n, c.r
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub r: usize,
    pub p: f64,
    pub rho: f64,
    pub gamma: Option<f64>,
}

/// One seeded recovery attempt.
#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub dataset: DatasetSpec,
    pub p: f64,
    pub noise_bound: Option<f64>,
    pub solver: SolverConfig,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: usize,
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    /// ‖X_rec − X‖_F / ‖X‖_F against the noiseless truth; NaN when no
    /// iterate was produced.
    pub rel_error: f64,
    pub iterations: usize,
    pub success: bool,
}

/// Generates, samples, initializes and solves. Failures of any stage are
/// recorded, never propagated.
pub fn run_trial(spec: &TrialSpec) -> TrialRecord {
    let seed = spec.dataset.seed;
    let fail = |status: String| TrialRecord {
        cell: 0,
        trial: 0,
        seed,
        status,
        rel_error: f64::NAN,
        iterations: 0,
        success: false,
    };
    let outcome = (|| -> Result<TrialRecord> {
        let points = generate(&spec.dataset)?;
        let truth = factored_gram_from_points(&points)?;
        let observed = match spec.noise_bound {
            Some(b) => perturb_points(&points, &NoiseSpec::new(b, seed)?),
            None => points,
        };
        let omega = bernoulli_sample(observed.n(), spec.p, seed)?;
        let data = observe(&gram_from_points(&observed)?, &omega)?.with_p(spec.p)?;
        let prob = Problem::new(data, spec.dataset.r)?;
        let x0 = init_one_step(&prob)?;
        let cfg = spec.solver.clone().with_truth(truth);
        let out = dbre_solve(&prob, x0, &cfg)?;
        let rel_error = out.trace.final_rel_truth_error().unwrap_or(f64::NAN);
        let status = match &out.trace.status {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::Degenerate(_) => "degenerate",
            SolveStatus::Diverged => "diverged",
        };
        Ok(TrialRecord {
            cell: 0,
            trial: 0,
            seed,
            status: status.into(),
            rel_error,
            iterations: out.trace.iterations(),
            success: rel_error <= spec.threshold,
        })
    })();
    outcome.unwrap_or_else(|e| fail(format!("error:{}", e.kind())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub cell: Cell,
    pub trials: usize,
    pub successes: usize,
    pub success_fraction: f64,
    pub median_rel_error: f64,
    pub median_iterations: f64,
    pub failed_trials: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialRecord>,
    pub config_hash: String,
    pub seed: u64,
}

/// Median of the finite values, NaN ranking above everything else.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridResult> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|c| (0..cfg.trials).map(move |t| (*c, t)))
        .collect();
    let threshold = cfg.threshold();
    let run = || -> Vec<(TrialRecord, f64)> {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(cell, t)| {
                let seed = cfg.seed + *t as u64;
                let mut dataset = cfg.dataset.with_seed(seed);
                dataset.r = cell.r;
                let spec = TrialSpec {
                    dataset,
                    p: cell.p,
                    noise_bound: cell.gamma.map(|g| 10f64.powf(g)),
                    solver: cfg.solver.clone(),
                    threshold,
                };
                let start = Instant::now();
                let mut rec = run_trial(&spec);
                rec.cell = cell.index;
                rec.trial = *t;
                (rec, start.elapsed().as_secs_f64())
            })
            .collect()
    };
    let results = match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| EdmcError::InvalidInput(e.to_string()))?
            .install(run),
        None => run(),
    };

    let mut summaries = Vec::with_capacity(cells.len());
    for (c, chunk) in cells.iter().zip(results.chunks(cfg.trials)) {
        let errs: Vec<f64> = chunk.iter().map(|(r, _)| r.rel_error).collect();
        let iters: Vec<f64> = chunk.iter().map(|(r, _)| r.iterations as f64).collect();
        let successes = chunk.iter().filter(|(r, _)| r.success).count();
        summaries.push(CellSummary {
            cell: *c,
            trials: chunk.len(),
            successes,
            success_fraction: successes as f64 / chunk.len() as f64,
            median_rel_error: median(&errs),
            median_iterations: median(&iters),
            failed_trials: chunk
                .iter()
                .filter(|(r, _)| r.status != "converged")
                .count(),
            wall_time_s: chunk.iter().map(|(_, t)| t).sum(),
        });
    }
    Ok(GridResult {
        cells: summaries,
        trials: results.into_iter().map(|(r, _)| r).collect(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// One row per cell. `wall_time_s` is the only column that is not
/// reproducible across runs.
pub fn write_grid_csv<W: Write>(res: &GridResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cell",
        "r",
        "p",
        "rho",
        "gamma",
        "trials",
        "successes",
        "success_fraction",
        "median_rel_error",
        "median_iterations",
        "failed_trials",
        "wall_time_s",
        "config_hash",
        "seed",
        "version",
    ])?;
    let version = version_string();
    for s in &res.cells {
        w.write_record([
            s.cell.index.to_string(),
            s.cell.r.to_string(),
            format!("{:?}", s.cell.p),
            format!("{:?}", s.cell.rho),
            fmt_opt(s.cell.gamma),
            s.trials.to_string(),
            s.successes.to_string(),
            format!("{:?}", s.success_fraction),
            format!("{:?}", s.median_rel_error),
            format!("{:?}", s.median_iterations),
            s.failed_trials.to_string(),
            format!("{:?}", s.wall_time_s),
            res.config_hash.clone(),
            res.seed.to_string(),
            version.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per trial, for failure triage.
pub fn write_trials_csv<W: Write>(res: &GridResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cell",
        "trial",
        "seed",
        "status",
        "rel_error",
        "iterations",
        "success",
        "config_hash",
        "version",
    ])?;
    let version = version_string();
    for t in &res.trials {
        w.write_record([
            t.cell.to_string(),
            t.trial.to_string(),
            t.seed.to_string(),
            t.status.clone(),
            format!("{:?}", t.rel_error),
            t.iterations.to_string(),
            t.success.to_string(),
            res.config_hash.clone(),
            version.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
