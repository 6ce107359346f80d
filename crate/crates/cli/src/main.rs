//! `dmp`: command-line driver for dependent Matérn process models.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmp_core::inference::InferenceConfig;
use dmp_core::io::{self, ConfigFile, CsvFormat, RunArtifacts};
use dmp_core::kernels::{CouplingMatrix, MaternHyper, Smoothness};
use dmp_core::nalgebra::DMatrix;
use dmp_core::pipeline::{self, Engine, ModelParams, RunOptions};
use dmp_core::simulate;
use dmp_core::ssm::JointStateSpaceModel;
use dmp_core::{DmpError, ErrorCategory, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dmp", version, about = "Dependent Matérn processes: simulate, fit, sample, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the model, or generate the synthetic benchmark.
    Simulate(SimulateArgs),
    /// Stage 1: per-series maximum-likelihood length-scales.
    Fit(FitArgs),
    /// Stage 2: Metropolis-Hastings over the coupling and noise variances.
    Sample(SampleArgs),
    /// Posterior predictions for every missing entry.
    Predict(PredictArgs),
    /// Print the posterior correlation matrix of a run report.
    Corr(CorrArgs),
    /// End-to-end run of the two-series synthetic benchmark.
    BenchSynth(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Long,
    Wide,
}

impl From<FormatArg> for CsvFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Auto => CsvFormat::Auto,
            FormatArg::Long => CsvFormat::Long,
            FormatArg::Wide => CsvFormat::Wide,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Ssm,
    Dense,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Ssm => Engine::Ssm,
            EngineArg::Dense => Engine::Dense,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV (long `time,series,value` or wide `time,<names>...`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

#[derive(Args)]
struct ModelArgs {
    /// Smoothness: 0.5, 1.5 or 2.5.
    #[arg(long)]
    nu: f64,
    /// TOML file with `[stage1]`, `[stage2]` and `[priors]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model raw values instead of subtracting each series' observed mean.
    #[arg(long)]
    no_center: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generate the two-series synthetic benchmark instead.
    #[arg(long)]
    synth: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (training view: held-out entries are empty).
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV with every generated value, including held-out ones.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long, required_unless_present = "synth")]
    nu: Option<f64>,
    /// Comma-separated length-scales, one per series.
    #[arg(long, value_delimiter = ',', required_unless_present = "synth")]
    ell: Vec<f64>,
    /// Coupling covariance `C`, rows separated by `;`, e.g. `1,0.8;0.8,1`.
    #[arg(long, required_unless_present = "synth")]
    coupling: Option<String>,
    /// Comma-separated noise variances, one per series.
    #[arg(long, value_delimiter = ',', required_unless_present = "synth")]
    tau2: Vec<f64>,
    /// Number of uniformly random time points.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Rank of the coupling factor; recorded for later stages.
    #[arg(long)]
    rank: usize,
    /// Run report (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    rank: usize,
    /// Report from `fit`; stage 1 is rerun when absent.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    chain_length: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent chains run in parallel with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Report from `fit` or `sample`.
    #[arg(long)]
    params: PathBuf,
    /// Optional CSV holding the true values of missing entries.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ssm")]
    engine: EngineArg,
    /// Use the final chain state instead of posterior means.
    #[arg(long)]
    last_sample: bool,
    /// Predictions CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrArgs {
    #[arg(long)]
    params: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    chain_length: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, value_enum, default_value = "ssm")]
    engine: EngineArg,
    /// Predict with the final chain state instead of posterior means.
    #[arg(long)]
    last_sample: bool,
}

fn exit_code(cat: ErrorCategory) -> u8 {
    match cat {
        ErrorCategory::Validation => 2,
        ErrorCategory::Numeric => 3,
        ErrorCategory::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("{}", json!({ "error": { "category": cat.as_str(), "message": e.to_string() } }));
            ExitCode::from(exit_code(cat))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Corr(a) => corr_cmd(a),
        Command::BenchSynth(a) => bench_cmd(a),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or(Ok(ConfigFile::default()), |p| io::read_config(p).map(|c| c.0))
}

fn inference_config(nu: f64, rank: usize, file: ConfigFile) -> Result<InferenceConfig> {
    let mut cfg = InferenceConfig::new(Smoothness::from_nu(nu)?, rank);
    cfg.stage1 = file.stage1;
    cfg.stage2 = file.stage2;
    cfg.priors = file.priors;
    Ok(cfg)
}

fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| DmpError::validation(format!("bad matrix entry {v:?}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(DmpError::validation("coupling matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let (train, full) = if a.synth {
        let ds = simulate::synth_benchmark(a.seed)?.dataset;
        let full = ds.with_mask(vec![vec![true; ds.n_series()]; ds.n_times()])?;
        (ds, full)
    } else {
        let nu = Smoothness::from_nu(a.nu.expect("required by clap"))?;
        let c = parse_matrix(a.coupling.as_deref().expect("required by clap"))?;
        if a.ell.len() != c.nrows() || a.tau2.len() != c.nrows() {
            return Err(DmpError::validation("--ell, --tau2 and --coupling sizes differ"));
        }
        let hypers = a.ell.iter().map(|&l| MaternHyper::new(nu, l)).collect::<Result<Vec<_>>>()?;
        let model = JointStateSpaceModel::new(hypers, CouplingMatrix::from_covariance(&c)?)?;
        if !(a.t_end > a.t_start) || a.n == 0 {
            return Err(DmpError::validation("need n > 0 and t-end > t-start"));
        }
        let times = simulate::uniform_times(a.n, a.t_start, a.t_end, a.seed);
        let ds = simulate::sample_path(&model, &times, &a.tau2, a.seed.wrapping_add(1))?;
        (ds.clone(), ds)
    };
    io::write_dataset(&train, &a.out)?;
    if let Some(p) = &a.truth_out {
        io::write_dataset(&full, p)?;
    }
    print_json(&json!({
        "series": train.names(),
        "n_times": train.n_times(),
        "n_observed": train.n_observed(),
        "out": a.out,
    }));
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let data = io::read_dataset(&a.data.data, a.data.format.into())?;
    let cfg = inference_config(a.model.nu, a.rank, load_config(a.model.config.as_deref())?)?;
    let opts = RunOptions {
        center: !a.model.no_center,
        ..RunOptions::default()
    };
    let art = pipeline::run_fit(&data, &cfg, &opts)?;
    for f in art.fits.iter().filter(|f| f.weakly_identified) {
        eprintln!("warning: length-scale of {} is weakly identified", f.series);
    }
    art.write(&a.out)?;
    print_json(&serde_json::to_value(&art.fits).expect("serializable"));
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let data = io::read_dataset(&a.data.data, a.data.format.into())?;
    let mut cfg = inference_config(a.model.nu, a.rank, load_config(a.model.config.as_deref())?)?;
    if let Some(n) = a.chain_length {
        cfg.stage2.chain_length = n;
        if a.burn_in.is_none() && n > 0 {
            cfg.stage2.burn_in = cfg.stage2.burn_in.min(n / 5);
        }
    }
    if let Some(b) = a.burn_in {
        cfg.stage2.burn_in = b;
    }
    if let Some(s) = a.seed {
        cfg.stage2.seed = s;
    }
    if a.chains == 0 {
        return Err(DmpError::validation("--chains must be at least 1"));
    }
    cfg.validate(data.n_series())?;
    let previous = a.fit.as_deref().map(RunArtifacts::read).transpose()?;
    let opts = RunOptions {
        center: !a.model.no_center,
        chains: a.chains,
        ..RunOptions::default()
    };
    let start = Instant::now();
    let (art, _) = pipeline::run_sample(&data, &cfg, &opts, previous.as_ref())?;
    eprintln!("sampling took {:.2} s", start.elapsed().as_secs_f64());
    art.write(&a.out)?;
    let post = art.posterior.as_ref().expect("sample sets the posterior");
    print_json(&json!({
        "acceptance_rate": post.acceptance_rate,
        "rho": post.summary.mean_rho,
        "rho_lower": post.summary.rho_lower,
        "rho_upper": post.summary.rho_upper,
        "tau2": post.summary.mean_tau2,
    }));
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let mut data = io::read_dataset(&a.data.data, a.data.format.into())?;
    if let Some(t) = &a.truth {
        let truth = io::read_dataset(t, a.data.format.into())?;
        data = pipeline::attach_truth(&data, &truth)?;
    }
    let art = RunArtifacts::read(&a.params)?;
    if art.series != data.names() {
        return Err(DmpError::validation("run report was produced for different series"));
    }
    let params = ModelParams::from_artifacts(&art, a.last_sample)?;
    let preds = pipeline::predict(&data, &params, a.engine.into())?;
    io::write_predictions(&preds, data.names(), &a.out)?;
    let metrics = pipeline::evaluate(&preds, data.names())?;
    print_json(&serde_json::to_value(&metrics).expect("serializable"));
    Ok(())
}

fn corr_cmd(a: CorrArgs) -> Result<()> {
    let art = RunArtifacts::read(&a.params)?;
    let post = art
        .posterior
        .ok_or_else(|| DmpError::validation("run report has no posterior; run `sample` first"))?;
    print_json(&json!({
        "series": art.series,
        "rho": post.summary.mean_rho,
        "rho_lower": post.summary.rho_lower,
        "rho_upper": post.summary.rho_upper,
    }));
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut cfg = pipeline::bench_config(a.seed);
    let file = load_config(a.config.as_deref())?;
    cfg.stage1 = file.stage1;
    cfg.stage2 = dmp_core::inference::Stage2Config {
        seed: a.seed,
        ..file.stage2
    };
    cfg.priors = file.priors;
    if let Some(n) = a.chain_length {
        cfg.stage2.chain_length = n;
        if a.burn_in.is_none() && n > 0 {
            cfg.stage2.burn_in = cfg.stage2.burn_in.min(n / 5);
        }
    }
    if let Some(b) = a.burn_in {
        cfg.stage2.burn_in = b;
    }
    let opts = RunOptions {
        engine: a.engine.into(),
        use_last_sample: a.last_sample,
        ..RunOptions::default()
    };
    let start = Instant::now();
    let outcome = pipeline::bench_synth(a.seed, &cfg, &opts, Some(&a.out))?;
    let secs = start.elapsed().as_secs_f64();
    eprintln!("bench-synth took {secs:.2} s");
    let m = &outcome.artifacts.metrics;
    print_json(&json!({
        "held_out": outcome.predictions.len(),
        "smse": m.smse,
        "coverage": m.coverage,
        "rho": outcome.artifacts.posterior.as_ref().map(|p| &p.summary.mean_rho),
        "wall_clock_s": secs,
        "out": a.out,
    }));
    Ok(())
}
