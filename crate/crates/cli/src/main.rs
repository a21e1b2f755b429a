//! `edmc`: generate → sample → init → solve → diagnose, plus grid experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edmc::diagnostics::{htilde_lambda_max, incoherence_nu, rip_estimate, PowerConfig};
use edmc::experiment::{
    hash_json, run_grid, version_string, write_grid_csv, write_trials_csv, ExperimentConfig,
};
use edmc::geometry::{
    factored_gram_from_points, read_points_file, write_points_file, FactoredGramRecord,
};
use edmc::sampling::{perturb_points, read_samples, sample_and_observe, write_samples, NoiseSpec};
use edmc::solver::{
    dbre_solve, init_one_step, recover_points, SamplingOperator, SolveStatus, SolverConfig,
};
use edmc::synthdata::{
    generate, DatasetKind, DatasetSpec, DEFAULT_SWISS_HEIGHT, DEFAULT_SWISS_TURNS,
};
use edmc::{EdmcError, Problem, RankRGram};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "edmc", version, about = "Euclidean distance matrix completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic point cloud.
    Generate(GenerateArgs),
    /// Bernoulli-sample squared distances of a point cloud.
    Sample(SampleArgs),
    /// One-step spectral initialization from sampled distances.
    Init(InitArgs),
    /// Run the Riemannian solver.
    Solve(SolveArgs),
    /// Incoherence and sampling diagnostics of a configuration.
    Diagnose(DiagnoseArgs),
    /// Run an experiment grid from a JSON config.
    Grid(GridArgs),
}

#[derive(Args, Serialize)]
struct Output {
    /// Directory for all artifacts; created if missing.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Sphere,
    SwissRoll,
    Ball,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    kind: Kind,
    #[arg(long)]
    n: usize,
    /// Ambient dimension (fixed to 3 for the swiss roll).
    #[arg(long, default_value_t = 3)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    output: Output,
}

#[derive(Args, Serialize)]
struct SampleArgs {
    /// Point cloud CSV.
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the points by uniform noise of bound 10^gamma before observing.
    #[arg(long, allow_hyphen_values = true)]
    noise_gamma: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    output: Output,
}

#[derive(Args, Serialize)]
struct InitArgs {
    /// Stem of the samples files (`<stem>.csv` and `<stem>.json`).
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    r: usize,
    #[command(flatten)]
    #[serde(skip)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum OperatorArg {
    Debiased,
    Unscaled,
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    r: usize,
    /// Factored Gram JSON to start from instead of the spectral initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Ground-truth point CSV, for per-iteration error tracking.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, value_enum, default_value = "debiased")]
    operator: OperatorArg,
    #[command(flatten)]
    #[serde(skip)]
    output: Output,
}

#[derive(Args, Serialize)]
struct DiagnoseArgs {
    /// Point cloud CSV.
    #[arg(long, conflicts_with = "gram", required_unless_present = "gram")]
    points: Option<PathBuf>,
    /// Factored Gram JSON.
    #[arg(long)]
    gram: Option<PathBuf>,
    /// Samples stem; adds a restricted-isometry estimate on that sample.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    output: Output,
}

#[derive(Args)]
struct GridArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    output: Output,
}

/// A solve that ran but ended degenerate or diverged.
#[derive(Debug)]
struct SolveFailed(SolveStatus);

impl std::fmt::Display for SolveFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.0 {
            SolveStatus::Degenerate(d) => write!(f, "solve ended degenerate: {d}"),
            s => write!(f, "solve ended with status {s:?}"),
        }
    }
}

impl std::error::Error for SolveFailed {}

fn meta(command: &str, hash: String, seed: Option<u64>) -> Value {
    json!({
        "command": command,
        "config_hash": hash,
        "seed": seed,
        "version": version_string(),
    })
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Adds a `meta` field to an existing JSON object file.
fn stamp_json(path: &Path, meta: &Value) -> anyhow::Result<()> {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    v["meta"] = meta.clone();
    write_json(path, &v)
}

fn read_gram(path: &Path) -> anyhow::Result<RankRGram> {
    let rec: FactoredGramRecord = serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
    )?;
    Ok(RankRGram::try_from(rec)?)
}

fn gram_json(x: &RankRGram, meta: &Value) -> anyhow::Result<Value> {
    let mut v = serde_json::to_value(FactoredGramRecord::from(x))?;
    v["meta"] = meta.clone();
    Ok(v)
}

fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let kind = match a.kind {
        Kind::Sphere => DatasetKind::SphereSurface,
        Kind::Ball => DatasetKind::UnitBallUniform,
        Kind::SwissRoll => DatasetKind::SwissRoll {
            turns: DEFAULT_SWISS_TURNS,
            height: DEFAULT_SWISS_HEIGHT,
        },
    };
    let r = if matches!(a.kind, Kind::SwissRoll) {
        3
    } else {
        a.r
    };
    let spec = DatasetSpec {
        kind,
        n: a.n,
        r,
        seed: a.seed,
    };
    let points = generate(&spec)?;
    let dir = &a.output.out;
    write_points_file(&points, &dir.join("points.csv"))?;
    write_json(
        &dir.join("points.json"),
        &json!({ "dataset": spec, "meta": meta("generate", hash_json(a), Some(a.seed)) }),
    )
}

fn cmd_sample(a: &SampleArgs) -> anyhow::Result<()> {
    let points =
        read_points_file(&a.points).with_context(|| format!("reading {}", a.points.display()))?;
    let observed = match a.noise_gamma {
        Some(g) => perturb_points(&points, &NoiseSpec::from_exponent(g, a.seed)?),
        None => points,
    };
    let gram = factored_gram_from_points(&observed)?;
    let data = sample_and_observe(&gram, a.p, a.seed)?;
    let stem = a.output.out.join("samples");
    write_samples(&data, &stem)?;
    let mut m = meta("sample", hash_json(a), Some(a.seed));
    m["observed"] = json!(data.omega().len());
    stamp_json(&stem.with_extension("json"), &m)
}

fn cmd_init(a: &InitArgs) -> anyhow::Result<()> {
    let data = read_samples(&a.samples)
        .with_context(|| format!("reading samples {}", a.samples.display()))?;
    let seed = data.seed();
    let x0 = init_one_step(&Problem::new(data, a.r)?)?;
    write_json(
        &a.output.out.join("init.json"),
        &gram_json(&x0, &meta("init", hash_json(a), seed))?,
    )
}

fn cmd_solve(a: &SolveArgs) -> anyhow::Result<()> {
    let data = read_samples(&a.samples)
        .with_context(|| format!("reading samples {}", a.samples.display()))?;
    let seed = data.seed();
    let prob = Problem::new(data, a.r)?;
    let x0 = match &a.init {
        Some(path) => read_gram(path)?,
        None => init_one_step(&prob)?,
    };
    let mut cfg = SolverConfig {
        max_iters: a.max_iters,
        rel_change_tol: a.tol,
        operator: match a.operator {
            OperatorArg::Debiased => SamplingOperator::Debiased,
            OperatorArg::Unscaled => SamplingOperator::Unscaled,
        },
        ..SolverConfig::default()
    };
    cfg.validate()?;
    if let Some(path) = &a.truth {
        let pts = read_points_file(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = cfg.with_truth(factored_gram_from_points(&pts)?);
    }
    let m = meta("solve", hash_json(a), seed);
    let out = dbre_solve(&prob, x0, &cfg)?;
    let dir = &a.output.out;
    out.trace
        .write_jsonl(fs::File::create(dir.join("trace.jsonl"))?, &m)?;
    write_json(&dir.join("solution.json"), &gram_json(&out.x, &m)?)?;
    let rec = recover_points(&out.x);
    write_points_file(&rec.points, &dir.join("recovered_points.csv"))?;
    let last = out.trace.records.last();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "status": out.trace.status,
            "iterations": out.trace.iterations(),
            "final_residual_norm": last.map(|r| r.residual_norm),
            "final_rel_change": last.map(|r| r.rel_change),
            "initial_rel_truth_error": out.trace.initial_rel_truth_error,
            "final_rel_truth_error": out.trace.final_rel_truth_error(),
            "eigenvalues_clamped": rec.clamped,
            "not_psd": rec.not_psd,
            "meta": m,
        }),
    )?;
    match out.trace.status {
        SolveStatus::Converged | SolveStatus::MaxIters => Ok(()),
        s => Err(SolveFailed(s).into()),
    }
}

fn cmd_diagnose(a: &DiagnoseArgs) -> anyhow::Result<()> {
    let x = match (&a.points, &a.gram) {
        (Some(p), _) => factored_gram_from_points(
            &read_points_file(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        (None, Some(g)) => read_gram(g)?,
        (None, None) => bail!("one of --points or --gram is required"),
    };
    let power = PowerConfig {
        seed: a.seed,
        ..PowerConfig::default()
    };
    let mut report = serde_json::to_value(incoherence_nu(&x)?)?;
    report["htilde_lambda_max"] = serde_json::to_value(htilde_lambda_max(&x, &power))?;
    if let Some(stem) = &a.samples {
        let data =
            read_samples(stem).with_context(|| format!("reading samples {}", stem.display()))?;
        report["rip"] = serde_json::to_value(rip_estimate(&x, data.omega(), data.p(), &power)?)?;
        report["rip_p"] = json!(data.p());
    }
    report["meta"] = meta("diagnose", hash_json(a), Some(a.seed));
    write_json(&a.output.out.join("coherence.json"), &report)
}

fn cmd_grid(a: &GridArgs) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).context("parsing experiment config")?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    if a.threshold.is_some() {
        cfg.success_threshold = a.threshold;
    }
    let res = run_grid(&cfg)?;
    let dir = &a.output.out;
    write_grid_csv(&res, fs::File::create(dir.join("grid.csv"))?)?;
    write_trials_csv(&res, fs::File::create(dir.join("trials.csv"))?)?;
    write_json(
        &dir.join("grid.json"),
        &json!({ "config": cfg, "meta": meta("grid", cfg.hash(), Some(cfg.seed)) }),
    )
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(k) = e.downcast_ref::<EdmcError>() {
        k.kind()
    } else if let Some(SolveFailed(s)) = e.downcast_ref::<SolveFailed>() {
        match s {
            SolveStatus::Diverged => "diverged",
            _ => "degenerate_solve",
        }
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else if e.downcast_ref::<serde_json::Error>().is_some() {
        "json"
    } else {
        "other"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, out) = match &cli.command {
        Command::Generate(a) => ("generate", &a.output.out),
        Command::Sample(a) => ("sample", &a.output.out),
        Command::Init(a) => ("init", &a.output.out),
        Command::Solve(a) => ("solve", &a.output.out),
        Command::Diagnose(a) => ("diagnose", &a.output.out),
        Command::Grid(a) => ("grid", &a.output.out),
    };
    let result = fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .and_then(|_| match &cli.command {
            Command::Generate(a) => cmd_generate(a),
            Command::Sample(a) => cmd_sample(a),
            Command::Init(a) => cmd_init(a),
            Command::Solve(a) => cmd_solve(a),
            Command::Diagnose(a) => cmd_diagnose(a),
            Command::Grid(a) => cmd_grid(a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = error_kind(&e);
            eprintln!("edmc {name}: {e:#}");
            let body = json!({
                "command": name,
                "error": kind,
                "message": format!("{e:#}"),
                "version": version_string(),
            });
            if let Err(w) = write_json(&out.join("error.json"), &body) {
                eprintln!("edmc {name}: could not write error.json: {w:#}");
            }
            ExitCode::FAILURE
        }
    }
}
