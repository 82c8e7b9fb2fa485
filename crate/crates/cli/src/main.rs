//! `elphi` command-line tool.
//!
//! Exit codes: 0 when a test accepts or a command succeeds, 1 when a test
//! rejects, 2 on any error (bad input, infeasible problem, degenerate
//! alternative).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use elphi::divergence::PhiSpec;
use elphi::el::SolverConfig;
use elphi::inference::{run_test, Approximation, TestOutcome};
use elphi::model::{fit_mle, generate_sample, score_sum, BetaVector, Dataset, SimulationModel};
use elphi::power::{power_approx, sample_size, AlternativeSpec, PowerConfig, SigmaMode};
use elphi::sim::{dale_interval, is_near, run_grid, SimulationConfig};

#[derive(Parser, Debug)]
#[command(name = "elphi", version, about = "Empirical-likelihood phi-divergence tests for logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from a simulation model and write it as CSV.
    GenData(GenDataArgs),
    /// Maximum-likelihood fit of a logistic regression.
    Fit(FitArgs),
    /// Test H0: beta = beta0.
    Test(TestArgs),
    /// Approximate power against a fixed alternative.
    Power(PowerArgs),
    /// Smallest sample size reaching a target power.
    Samplesize(SampleSizeArgs),
    /// Run a Monte Carlo grid described by a JSON config.
    Simulate(SimulateArgs),
    /// Interval of sizes counted as near the nominal size.
    Dale(DaleArgs),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Number of grid starts for the multiplier solver.
    #[arg(long, default_value_t = 50)]
    starts: usize,
    /// Residual tolerance of the multiplier solver.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            n_start: self.starts,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Reference model 1 to 4.
    #[arg(long, conflicts_with = "beta")]
    model: Option<usize>,
    /// Coefficients `b0,b1` of a custom model.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with header `x1,...,xq,y`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    /// Hypothesised coefficients, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    beta0: String,
    #[arg(long, default_value = "power:a=0")]
    phi: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = ApproxArg::Chi2)]
    approx: ApproxArg,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct AlternativeArgs {
    #[arg(long, allow_hyphen_values = true)]
    beta0: String,
    #[arg(long, allow_hyphen_values = true)]
    beta_star: String,
    /// Only `power:a=<f>` is supported here.
    #[arg(long, default_value = "power:a=0")]
    phi: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = SigmaArg::DeltaMethod)]
    sigma_mode: SigmaArg,
    #[arg(long, default_value_t = 40)]
    quad_order: usize,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[command(flatten)]
    alt: AlternativeArgs,
    #[arg(long)]
    n: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct SampleSizeArgs {
    #[command(flatten)]
    alt: AlternativeArgs,
    #[arg(long)]
    target_power: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory. Without it the grid goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct DaleArgs {
    /// Nominal size.
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0.35)]
    d: f64,
    /// Simulated size to classify.
    #[arg(long)]
    size: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ApproxArg {
    Chi2,
    F,
}

impl From<ApproxArg> for Approximation {
    fn from(a: ApproxArg) -> Self {
        match a {
            ApproxArg::Chi2 => Approximation::Chi2,
            ApproxArg::F => Approximation::FOwen,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SigmaArg {
    AsPrinted,
    ScoreCovariance,
    DeltaMethod,
}

impl From<SigmaArg> for SigmaMode {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::AsPrinted => SigmaMode::AsPrinted,
            SigmaArg::ScoreCovariance => SigmaMode::ScoreCovariance,
            SigmaArg::DeltaMethod => SigmaMode::DeltaMethod,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_beta(text: &str) -> Result<BetaVector> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("cannot parse {s:?} as a coefficient")))
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaVector::new(values)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv_path(path).with_context(|| format!("reading {}", path.display()))
}

fn gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let model = match (args.model, &args.beta) {
        (Some(m), None) => *SimulationModel::reference_models()
            .get(m.wrapping_sub(1))
            .ok_or_else(|| anyhow!("model must be between 1 and 4, got {m}"))?,
        (None, Some(b)) => {
            let beta = parse_beta(b)?;
            let &[b0, b1] = beta.as_slice() else {
                bail!("--beta takes exactly two coefficients");
            };
            SimulationModel::new(b0, b1, 0.5)?
        }
        _ => bail!("give either --model or --beta"),
    };
    let ds = generate_sample(&model, args.n, args.seed)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    emit(&args.out.out, std::str::from_utf8(&buf)?)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitReport {
    beta: Vec<f64>,
    n: usize,
    max_abs_score: f64,
}

fn fit(args: FitArgs) -> Result<ExitCode> {
    let ds = read_dataset(&args.data)?;
    let beta = fit_mle(&ds, &BetaVector::zeros(ds.q()), args.tol, args.max_iter)?;
    let score = score_sum(&ds, &beta)?;
    let report = FitReport {
        beta: beta.as_slice().to_vec(),
        n: ds.n(),
        max_abs_score: score.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    };
    emit_json(&args.out.out, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn test(args: TestArgs) -> Result<ExitCode> {
    let ds = read_dataset(&args.data)?;
    let beta0 = parse_beta(&args.beta0)?;
    let phi: PhiSpec = args.phi.parse()?;
    match run_test(&ds, &beta0, &phi, args.level, args.approx.into(), &args.solver.config())? {
        TestOutcome::Decided(report) => {
            emit_json(&args.out.out, &report)?;
            Ok(ExitCode::from(u8::from(report.reject)))
        }
        infeasible @ TestOutcome::Infeasible { .. } => {
            emit_json(&args.out.out, &infeasible)?;
            Ok(ExitCode::from(2))
        }
    }
}

fn alternative(args: &AlternativeArgs) -> Result<(AlternativeSpec, elphi::PhiFamily, PowerConfig)> {
    let spec = AlternativeSpec::new(parse_beta(&args.beta0)?, parse_beta(&args.beta_star)?)?;
    let phi = match args.phi.parse::<PhiSpec>()? {
        PhiSpec::Power { a } => elphi::PhiFamily::power(a),
        other => bail!("power analysis supports power:a=<f> only, got {other}"),
    };
    let config = PowerConfig {
        quad_order: args.quad_order,
        sigma_mode: args.sigma_mode.into(),
        ..PowerConfig::default()
    };
    Ok((spec, phi, config))
}

fn power(args: PowerArgs) -> Result<ExitCode> {
    let (spec, phi, config) = alternative(&args.alt)?;
    let report = power_approx(&spec, args.n, args.alt.level, &phi, &config)?;
    emit_json(&args.out.out, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn samplesize(args: SampleSizeArgs) -> Result<ExitCode> {
    let (spec, phi, config) = alternative(&args.alt)?;
    let report = sample_size(&spec, args.alt.level, args.target_power, &phi, &config)?;
    emit_json(&args.out.out, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = SimulationConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let grid = run_grid(&config, args.threads)?;
    let render = |format: Format| -> Result<String> {
        Ok(match format {
            Format::Json => grid.to_json()? + "\n",
            Format::Csv => {
                let mut buf = Vec::new();
                grid.write_csv(&mut buf)?;
                String::from_utf8(buf)?
            }
        })
    };
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let name = match args.format {
                Format::Csv => "grid.csv",
                Format::Json => "grid.json",
            };
            fs::write(dir.join(name), render(args.format)?)?;
            grid.write_plot_data(&dir.join("plot"))?;
            print!("{}", grid.summary_table());
        }
        None => {
            eprint!("{}", grid.summary_table());
            emit(&None, &render(args.format)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DaleReport {
    alpha: f64,
    d: f64,
    lower: f64,
    upper: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    near: Option<bool>,
}

fn dale(args: DaleArgs) -> Result<ExitCode> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("alpha must lie in (0, 1), got {}", args.alpha);
    }
    if !(args.d >= 0.0) {
        bail!("d must be non-negative, got {}", args.d);
    }
    let (lower, upper) = dale_interval(args.alpha, args.d);
    let report = DaleReport {
        alpha: args.alpha,
        d: args.d,
        lower,
        upper,
        size: args.size,
        near: args.size.map(|s| is_near(s, args.alpha, args.d)),
    };
    emit_json(&args.out.out, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Fit(a) => fit(a),
        Command::Test(a) => test(a),
        Command::Power(a) => power(a),
        Command::Samplesize(a) => samplesize(a),
        Command::Simulate(a) => simulate(a),
        Command::Dale(a) => dale(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
