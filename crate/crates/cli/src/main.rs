//! `e2nn` — drive adaptive-sampling optimization runs from the shell.
//!
//! Three verbs:
//! - `run`: execute one optimization campaign per seed, writing a JSONL trace
//!   and a run manifest per seed plus one summary CSV.
//! - `predict-grid`: rebuild the ensemble stored in a run manifest and
//!   tabulate its predictive distribution on a grid (CSV, plot-ready).
//! - `list-problems`: show the built-in benchmark problems.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use e2nn_ensemble::adaptive::{
    run_adaptive, write_trace, Dataset, Problem, RunSettings, TraceHeader, TraceResult,
};
use e2nn_ensemble::benchmarks::{all_problems, by_name};
use e2nn_ensemble::ensemble::{Ensemble, EnsembleConfig, EnsembleManifest};
use e2nn_ensemble::gpr::{run_ego, GprSettings};
use e2nn_ensemble::nalgebra::DMatrix;

#[derive(Parser)]
#[command(
    name = "e2nn",
    version,
    about = "Adaptive sampling with emulator-embedded neural-network ensembles",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run optimization campaigns and persist traces, manifests, and a summary CSV
    Run(RunArgs),
    /// Tabulate a saved ensemble's predictive distribution on a grid
    PredictGrid(PredictGridArgs),
    /// List the built-in benchmark problems
    ListProblems,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file mirroring the run configuration; flags override its fields
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Benchmark problem name (see `list-problems`)
    #[arg(long)]
    problem: Option<String>,
    /// Surrogate driving the loop [default: ensemble]
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Seeds: comma-separated values and inclusive ranges, e.g. `0..4` or `1,3,9..11`
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory [default: $E2NN_OUTPUT_DIR, else `runs`]
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Relative EI stopping tolerance
    #[arg(long)]
    ei_tolerance: Option<f64>,
    /// Initial design size [default: 3 in 1D, else max(8, 2d+2)]
    #[arg(long)]
    n_init: Option<usize>,
    /// Adaptive-sample budget [default: 50 per dimension]
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Ensemble replicates per (architecture, activation) cell
    #[arg(long)]
    replicates: Option<usize>,
    /// Offset added to every ensemble member's training seed
    #[arg(long)]
    base_seed: Option<u64>,
}

#[derive(Args)]
struct PredictGridArgs {
    /// Run manifest written by `run` (ensemble method only)
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Grid resolution per dimension, bounds included
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Append rows at the run's training inputs after the grid
    #[arg(long)]
    include_training: bool,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Ensemble,
    Kriging,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::Ensemble => "ensemble",
            Method::Kriging => "kriging",
        }
    }
}

/// On-disk run configuration; every field is optional so a file can pin just
/// the parts it cares about. Unknown keys are rejected to catch typos.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    problem: Option<String>,
    method: Option<Method>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    ei_tolerance: Option<f64>,
    n_init: Option<usize>,
    max_iterations: Option<usize>,
    ensemble: Option<EnsembleConfig>,
    gpr: Option<GprSettings>,
}

/// Everything `predict-grid` needs to rebuild the surrogate: the problem (for
/// bounds and emulators), the resolved loop settings, the outcome, the data
/// the final model was trained on, and — for ensemble runs — the full member
/// manifest.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    problem: String,
    method: Method,
    seed: u64,
    bounds: Vec<(f64, f64)>,
    n_init: usize,
    ei_tolerance: f64,
    max_iterations: usize,
    result: TraceResult,
    dataset: DatasetTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    ensemble: Option<EnsembleManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetTable {
    /// Original (unscaled) coordinates, one row per sample.
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

/// Marker for problems the user can fix by editing the command line; mapped
/// to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::PredictGrid(args) => cmd_predict_grid(args),
        Command::ListProblems => cmd_list_problems(),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(if err.is::<Usage>() { 2 } else { 1 });
    }
}

/// `0..4` and `7` entries, comma separated; ranges are inclusive. Duplicates
/// are dropped (first occurrence wins) so a seed never runs twice.
fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut seeds: Vec<u64> = Vec::new();
    let mut push = |s: u64| {
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    };
    for tok in spec.split(',') {
        let tok = tok.trim();
        if let Some((a, b)) = tok.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| usage(format!("bad range start in {tok:?}")))?;
            let b: u64 = b.trim().parse().map_err(|_| usage(format!("bad range end in {tok:?}")))?;
            if b < a {
                return Err(usage(format!("descending seed range {tok:?}")));
            }
            (a..=b).for_each(&mut push);
        } else {
            push(tok.parse().map_err(|_| usage(format!("bad seed {tok:?}")))?);
        }
    }
    if seeds.is_empty() {
        return Err(usage(format!("no seeds in {spec:?}")));
    }
    Ok(seeds)
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn available_problem_names() -> String {
    all_problems().iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };

    let problem_name = args
        .problem
        .or(cfg.problem)
        .ok_or_else(|| usage("missing --problem (or `problem` in the config file)"))?;
    let bench = by_name(&problem_name).ok_or_else(|| {
        usage(format!(
            "unknown problem {problem_name:?}; available: {}",
            available_problem_names()
        ))
    })?;
    let method = args.method.or(cfg.method).unwrap_or(Method::Ensemble);
    let seeds = match &args.seeds {
        Some(spec) => parse_seeds(spec)?,
        None => match cfg.seeds {
            Some(s) if s.is_empty() => return Err(usage("config lists no seeds")),
            Some(s) => s,
            None => vec![0],
        },
    };
    let out_dir = args
        .output_dir
        .or(cfg.output_dir)
        .or_else(|| std::env::var_os("E2NN_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut settings = RunSettings::new(0);
    settings.ei_tolerance = args.ei_tolerance.or(cfg.ei_tolerance).unwrap_or(settings.ei_tolerance);
    settings.n_init = args.n_init.or(cfg.n_init);
    settings.max_iterations = args.max_iterations.or(cfg.max_iterations);
    if let Some(e) = cfg.ensemble {
        settings.ensemble = e;
    }
    if let Some(g) = cfg.gpr {
        settings.gpr = g;
    }
    if let Some(r) = args.replicates {
        settings.ensemble.replicates = r;
    }
    if let Some(b) = args.base_seed {
        settings.ensemble.base_seed = b;
    }

    let problem = Problem::from(&bench);
    let stem = |seed: u64| format!("{problem_name}-{}-seed{seed}", method.as_str());

    let mut summary = String::from("seed,n_hf_samples,best_y,converged\n");
    for &seed in &seeds {
        settings.seed = seed;
        let (state, ensemble_manifest, surrogate_desc) = match method {
            Method::Ensemble => {
                let run = run_adaptive(&problem, &settings)
                    .with_context(|| format!("{problem_name} seed {seed}"))?;
                let desc = describe_ensemble(&settings.ensemble);
                (run.state, Some(run.ensemble.manifest()), desc)
            }
            Method::Kriging => {
                let run = run_ego(&problem, &settings)
                    .with_context(|| format!("{problem_name} seed {seed}"))?;
                let desc = "ordinary kriging, squared-exponential correlation".to_string();
                (run.state, None, desc)
            }
        };

        let n_init = state.dataset.len() - state.iteration;
        let header = TraceHeader {
            problem: problem_name.clone(),
            method: method.as_str().to_string(),
            seed,
            bounds: problem.bounds.clone(),
            n_init,
            ei_tolerance: state.ei_tolerance,
            max_iterations: state.max_iterations,
            surrogate: surrogate_desc,
        };
        let trace_path = out_dir.join(format!("{}.trace.jsonl", stem(seed)));
        let mut trace = BufWriter::new(
            fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?,
        );
        write_trace(&mut trace, &header, &state)?;
        trace.flush()?;

        let manifest = RunManifest {
            problem: problem_name.clone(),
            method,
            seed,
            bounds: problem.bounds.clone(),
            n_init,
            ei_tolerance: state.ei_tolerance,
            max_iterations: state.max_iterations,
            result: state.result(),
            dataset: DatasetTable {
                inputs: state.dataset.points().to_vec(),
                targets: state.dataset.targets().to_vec(),
            },
            ensemble: ensemble_manifest,
        };
        let manifest_path = out_dir.join(format!("{}.run.json", stem(seed)));
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", manifest_path.display()))?;

        let r = state.result();
        summary.push_str(&format!(
            "{seed},{},{},{}\n",
            r.n_hf_samples, r.best_y, r.converged
        ));
        eprintln!(
            "{problem_name} [{}] seed {seed}: {} HF samples, best y = {}{}",
            method.as_str(),
            r.n_hf_samples,
            r.best_y,
            if r.converged { "" } else { " (budget exhausted)" }
        );
    }

    let summary_path = out_dir.join(format!("{problem_name}-{}-summary.csv", method.as_str()));
    fs::write(&summary_path, summary).with_context(|| format!("writing {}", summary_path.display()))?;
    eprintln!("wrote {}", summary_path.display());
    Ok(())
}

fn describe_ensemble(cfg: &EnsembleConfig) -> String {
    format!(
        "e2nn ensemble: {} architectures x {} activations x {} replicates",
        cfg.architectures.len(),
        cfg.activations.len(),
        cfg.replicates
    )
}

/// Row cap for the full-factorial grid; past this the CSV stops being a
/// sensible artifact and the request is almost certainly a typo.
const MAX_GRID_ROWS: usize = 1 << 22;

/// Evaluation chunk: keeps the widest hidden layers from materializing a
/// giant activation matrix for the whole grid at once.
const PREDICT_CHUNK: usize = 2048;

fn cmd_predict_grid(args: PredictGridArgs) -> Result<()> {
    if args.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.manifest.display()))?;
    let ensemble_manifest = manifest.ensemble.as_ref().ok_or_else(|| {
        anyhow::anyhow!(
            "{} records a {} run; predict-grid needs an ensemble manifest",
            args.manifest.display(),
            manifest.method.as_str()
        )
    })?;

    let bench = by_name(&manifest.problem).ok_or_else(|| {
        anyhow::anyhow!(
            "manifest references unknown problem {:?}; available: {}",
            manifest.problem,
            available_problem_names()
        )
    })?;
    let emulators = Problem::from(&bench).scaled_emulators();
    let ensemble = Ensemble::from_manifest(ensemble_manifest, &emulators)?;

    let d = manifest.bounds.len();
    if args.points.checked_pow(d as u32).is_none_or(|n| n > MAX_GRID_ROWS) {
        return Err(usage(format!(
            "{} points over {d} dimensions exceeds the {MAX_GRID_ROWS}-row cap",
            args.points
        )));
    }
    let mut rows = grid_points(&manifest.bounds, args.points);
    if args.include_training {
        rows.extend(manifest.dataset.inputs.iter().cloned());
    }

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let coords: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    writeln!(out, "{},mean,scale,dof,lo95,hi95", coords.join(","))?;

    // Dataset only provides the coordinate scaling here; targets are not needed.
    let scaler = Dataset::new(manifest.bounds.clone())?;
    for chunk in rows.chunks(PREDICT_CHUNK) {
        let scaled: Vec<Vec<f64>> = chunk.iter().map(|x| scaler.scale_point(x)).collect();
        let m = DMatrix::from_fn(chunk.len(), d, |r, c| scaled[r][c]);
        let preds = ensemble.posterior_batch(&m)?;
        for (x, p) in chunk.iter().zip(&preds) {
            let lo = p.quantile(0.025)?;
            let hi = p.quantile(0.975)?;
            let xs: Vec<String> = x.iter().map(f64::to_string).collect();
            writeln!(out, "{},{},{},{},{lo},{hi}", xs.join(","), p.mean, p.scale, p.dof)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Full-factorial grid over the box, bounds included, last coordinate fastest.
fn grid_points(bounds: &[(f64, f64)], per_dim: usize) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let step = |&(lo, hi): &(f64, f64), i: usize| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64;
    let mut idx = vec![0usize; d];
    let mut out = Vec::new();
    loop {
        out.push(idx.iter().zip(bounds).map(|(&i, b)| step(b, i)).collect());
        let mut k = d;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_dim {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn cmd_list_problems() -> Result<()> {
    let mut out = io::stdout().lock();
    for p in all_problems() {
        let bounds: Vec<String> =
            p.bounds.iter().map(|(lo, hi)| format!("[{lo}, {hi}]")).collect();
        let optimum = match &p.known_optimum {
            Some(o) => {
                let xs: Vec<String> = o.x.iter().map(f64::to_string).collect();
                format!("optimum y = {} at ({})", o.y, xs.join(", "))
            }
            None => "optimum unknown".to_string(),
        };
        writeln!(
            out,
            "{:<16} d={}  {} LF emulator(s)  bounds {}  {}",
            p.name,
            p.dim(),
            p.lf_list.len(),
            bounds.join(" x "),
            optimum
        )?;
    }
    Ok(())
}
