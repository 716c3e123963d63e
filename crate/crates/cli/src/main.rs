use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exatensor::pipeline::{
    self, evaluate, generate, materialize, threads_from_env, xts, PipelineConfig, PipelineMode, Precision, Replicas,
    RunMetrics, SyntheticSpec, Truth, XtsData, XtsKind, XtsTensorFile, DEFAULT_MEMORY_BUDGET,
};
use exatensor::recovery::OmpConfig;
use exatensor::{selftest, Error, FactorTriple};

#[derive(Parser)]
#[command(name = "xts", version, about = "Compression-based CP decomposition of large tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic low-rank tensor and its factors.
    Gen(GenArgs),
    /// Decompose a tensor or factor file.
    Decompose(DecomposeArgs),
    /// Score recovered factors against the truth.
    Eval(EvalArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dense,
    Sparse,
    TwoStage,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Full,
    Mixed,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, num_args = 3, value_names = ["I", "J", "K"], required = true)]
    dims: Vec<usize>,
    #[arg(long)]
    rank: usize,
    /// `sparse` places `--sparsity` nonzeros in each factor column.
    #[arg(long, value_enum, default_value = "dense")]
    mode: ModeArg,
    /// Nonzeros per factor column; defaults to a hundredth of the smallest dim.
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dense tensor path; the factors go next to it as `<name>.factors.xts`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Dense tensor or factor file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, num_args = 3, value_names = ["L", "M", "N"], required = true)]
    reduced: Vec<usize>,
    #[arg(long)]
    rank: usize,
    #[arg(long, conflicts_with_all = ["auto_replicas", "slack"])]
    replicas: Option<usize>,
    /// Replica count from the dimension bound plus `--slack` (the default).
    #[arg(long)]
    auto_replicas: bool,
    #[arg(long, default_value_t = 10)]
    slack: usize,
    #[arg(long)]
    shared: Option<usize>,
    #[arg(long, num_args = 3, value_names = ["D1", "D2", "D3"])]
    block: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "dense")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.6)]
    alpha: f64,
    #[arg(long, default_value_t = 1.6)]
    beta: f64,
    #[arg(long, default_value_t = 1.6)]
    gamma: f64,
    /// OMP sparsity; required by the sparse and two-stage modes.
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
    /// Output directory; receives `factors.xts`.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines file one record per stage is appended to.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Truth: a factor file or a dense tensor.
    #[arg(long = "in")]
    input: PathBuf,
    /// Recovered factor file.
    #[arg(long)]
    recovered: PathBuf,
    /// JSON-lines file the evaluation record is appended to.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn triple(v: &[usize]) -> (usize, usize, usize) {
    (v[0], v[1], v[2])
}

fn factors_path(out: &Path) -> PathBuf {
    out.with_extension("factors.xts")
}

fn gen(a: GenArgs) -> exatensor::Result<()> {
    let dims = triple(&a.dims);
    let spec = match a.mode {
        ModeArg::Dense => SyntheticSpec::dense(dims, a.rank, a.seed),
        ModeArg::Sparse => {
            let nnz = a.sparsity.unwrap_or((dims.0.min(dims.1).min(dims.2) / 100).max(1));
            SyntheticSpec::sparse(dims, a.rank, nnz, a.seed)
        }
        ModeArg::TwoStage => return Err(Error::Usage("gen supports the dense and sparse modes".into())),
    };
    let f = generate(&spec)?;
    let fp = factors_path(&a.out);
    xts::write_factors(&fp, &f)?;
    let t = materialize(&f, DEFAULT_MEMORY_BUDGET).map_err(|e| {
        Error::Usage(format!("{e}; the factor file {} can be decomposed directly", fp.display()))
    })?;
    xts::write_tensor(&a.out, &t)?;
    println!("wrote {} and {}", a.out.display(), fp.display());
    Ok(())
}

fn config(a: &DecomposeArgs) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(triple(&a.reduced), a.rank);
    cfg.replicas = match a.replicas {
        Some(p) => Replicas::Fixed(p),
        None => Replicas::Auto { slack: a.slack },
    };
    cfg.shared = a.shared;
    cfg.block = a.block.as_deref().map(triple);
    cfg.mode = match a.mode {
        ModeArg::Dense => PipelineMode::Dense,
        ModeArg::Sparse => PipelineMode::Sparse,
        ModeArg::TwoStage => PipelineMode::TwoStage {
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
        },
    };
    cfg.omp = a.sparsity.map(OmpConfig::new);
    cfg.precision = match a.precision {
        PrecisionArg::Full => Precision::Full,
        PrecisionArg::Mixed => Precision::Mixed,
    };
    cfg.deterministic = a.deterministic;
    cfg.seed = a.seed;
    cfg.threads = threads_from_env();
    cfg
}

fn append_metrics(path: &Path, m: &RunMetrics) -> exatensor::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    m.write_jsonl(&mut f)?;
    Ok(f.flush()?)
}

fn decompose(a: DecomposeArgs) -> exatensor::Result<()> {
    let cfg = config(&a);
    let run = match xts::peek(&a.input)? {
        XtsKind::Dense(_) => pipeline::run(&XtsTensorFile::open(&a.input)?, &cfg),
        XtsKind::Factors { .. } => match xts::read(&a.input)? {
            XtsData::Factors(f) => pipeline::run(&f, &cfg),
            XtsData::Dense(t) => pipeline::run(&t, &cfg),
        },
    };
    if let Some(p) = &a.metrics {
        append_metrics(p, &run.metrics)?;
    }
    for w in run.metrics.warnings() {
        eprintln!("warning: {w}");
    }
    let f = run.result?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("factors.xts");
    xts::write_factors(&path, &f)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_factors(path: &Path) -> exatensor::Result<FactorTriple> {
    match xts::read(path)? {
        XtsData::Factors(f) => Ok(f),
        XtsData::Dense(_) => Err(Error::Data(format!("{} holds a dense tensor, not factors", path.display()))),
    }
}

fn eval(a: EvalArgs) -> exatensor::Result<()> {
    let recovered = load_factors(&a.recovered)?;
    let start = std::time::Instant::now();
    let e = match xts::peek(&a.input)? {
        XtsKind::Dense(_) => evaluate(&Truth::Tensor(&XtsTensorFile::open(&a.input)?), &recovered, None)?,
        XtsKind::Factors { .. } => evaluate(&Truth::Factors(&load_factors(&a.input)?), &recovered, None)?,
    };
    let value = serde_json::to_value(&e).map_err(std::io::Error::from)?;
    println!("{value}");
    if let Some(p) = &a.metrics {
        let mut m = RunMetrics::new(0, exatensor::pipeline::config_hash(&(a.input.display().to_string(), a.recovered.display().to_string())));
        let fields = value.as_object().cloned().unwrap_or_default();
        m.push("evaluation", start.elapsed().as_secs_f64(), None, Vec::new(), fields);
        append_metrics(p, &m)?;
    }
    Ok(())
}

fn selftest_cmd() -> ExitCode {
    let checks = selftest::run();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Decompose(a) => decompose(a),
        Command::Eval(a) => eval(a),
        Command::Selftest => return selftest_cmd(),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
