//! `ensemble-ols`: closed-form risk queries, one-off simulations, the figure
//! pipelines, and the validation suite behind a single binary.
//!
//! stdout carries only machine-parseable results (key=value lines, CSV, or
//! JSON per `--format`); anything diagnostic goes to stderr. Exit codes:
//! 0 success, 1 validation failure or runtime error, 2 usage or config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ensemble_ols::datagen::{BetaMode, ProblemSpec};
use ensemble_ols::experiments::{self, ExperimentConfig, FigureOutput};
use ensemble_ols::montecarlo;
use ensemble_ols::numfmt::{dec6, sig6};
use ensemble_ols::risk::{self, EnsembleSize, TheoryQuery};
use ensemble_ols::sampling::SubsampleScheme;
use ensemble_ols::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ensemble-ols", version, about = "Risk of subsampled least-squares ensembles: closed forms, simulation, figures, validation")]
struct Cli {
    /// Worker thread cap for simulations (0 = all cores).
    #[arg(long, global = true, env = "ENSEMBLE_OLS_THREADS", default_value_t = 0)]
    threads: usize,

    /// stdout style.
    #[arg(long, global = true, value_enum, default_value_t = Format::Kv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    /// `key=value` lines, six decimal places.
    Kv,
    /// Comma-separated with a header row, six significant digits.
    Csv,
    /// One JSON document.
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the closed-form limiting risk theory.
    Theory(TheoryArgs),
    /// Simulate ensemble risk over a grid of ensemble sizes.
    Simulate(SimulateArgs),
    /// Run a figure pipeline and write its CSV next to a manifest.
    Figure(FigureArgs),
    /// Run the statistical and algebraic validation suite.
    Validate(ValidateArgs),
}

/// Output scale argument: a number, or `opt` for the tuned scale.
#[derive(Clone, Copy, Debug)]
enum MuArg {
    Opt,
    Fixed(f64),
}

fn parse_mu(text: &str) -> std::result::Result<MuArg, String> {
    if text == "opt" {
        return Ok(MuArg::Opt);
    }
    text.parse::<f64>()
        .map(MuArg::Fixed)
        .map_err(|_| "expected a number or 'opt'".to_string())
}

#[derive(Args)]
struct TheoryArgs {
    /// Aspect ratio, the p/n limit.
    #[arg(long)]
    gamma: f64,

    /// Noise level.
    #[arg(long)]
    sigma: f64,

    /// Feature rate, the |S|/p limit. Omit to use the optimal rate.
    #[arg(long)]
    alpha: Option<f64>,

    /// Example rate, the |T|/n limit.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,

    /// Ensemble size. Omit for the infinite-ensemble limit.
    #[arg(long)]
    k: Option<u64>,

    /// Output scale applied to the averaged coefficients; infinite-ensemble
    /// only and needs an explicit --alpha.
    #[arg(long, value_parser = parse_mu, requires = "alpha", conflicts_with = "k")]
    mu: Option<MuArg>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Examples per instance.
    #[arg(long)]
    n: usize,

    /// Features per instance.
    #[arg(long)]
    p: usize,

    /// Feature rate |S|/p.
    #[arg(long)]
    alpha: f64,

    /// Example rate |T|/n.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,

    /// Noise level.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,

    /// Ensemble sizes, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,

    /// Independent instances per ensemble size.
    #[arg(long, default_value_t = 100)]
    trials: u64,

    /// Master seed; fully determines the output.
    #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct FigureArgs {
    /// Pipeline number: 2 (convergence in k), 3 (noise sweep), 4 (output
    /// scaling, closed-form only).
    #[arg(value_parser = clap::value_parser!(u8).range(2..=4))]
    number: u8,

    /// JSON settings file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory for the CSV and manifest.
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    trials: Option<u64>,

    #[arg(long)]
    n: Option<usize>,

    #[arg(long)]
    sigma: Option<f64>,

    /// Ensemble-size grid override, comma-separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Args)]
struct ValidateArgs {
    /// JSON settings file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory for validation.json and the manifest.
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Trials per pairwise-term check.
    #[arg(long)]
    pair_trials: Option<u64>,

    /// Trials per matrix-identity check.
    #[arg(long)]
    identity_trials: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
        if let Err(e) = pool {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let usage_class = matches!(
                err,
                Error::InvalidConfig(_)
                    | Error::InvalidParameter(_)
                    | Error::ConstraintInfeasible { .. }
                    | Error::OutsideDomain(_)
            );
            ExitCode::from(if usage_class { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Theory(args) => run_theory(args, cli.format).map(|_| ExitCode::SUCCESS),
        Command::Simulate(args) => run_simulate(args, cli.format).map(|_| ExitCode::SUCCESS),
        Command::Figure(args) => run_figure(args, cli.format).map(|_| ExitCode::SUCCESS),
        Command::Validate(args) => run_validate(args, cli.format),
    }
}

fn run_theory(args: &TheoryArgs, format: Format) -> Result<()> {
    let (gamma, sigma, eta) = (args.gamma, args.sigma, args.eta);
    let mut pairs: Vec<(&str, f64)> = Vec::new();
    match (args.alpha, args.k, args.mu) {
        (None, None, None) => {
            let alpha_star = risk::optimal_alpha(gamma, sigma)?;
            pairs.push(("alpha_star", alpha_star));
            pairs.push(("risk", risk::large_ensemble_risk(alpha_star, gamma, sigma)?));
        }
        (None, Some(k), None) => {
            let alpha_star = risk::finite_k_optimal_alpha(gamma, sigma, eta, k)?;
            let q = TheoryQuery::new(alpha_star, eta, gamma, sigma, EnsembleSize::Finite(k));
            pairs.push(("alpha_star", alpha_star));
            pairs.push(("risk", risk::ensemble_risk(&q)?));
        }
        (Some(alpha), None, None) => {
            pairs.push(("risk", risk::large_ensemble_risk(alpha, gamma, sigma)?));
        }
        (Some(alpha), Some(k), None) => {
            let q = TheoryQuery::new(alpha, eta, gamma, sigma, EnsembleSize::Finite(k));
            pairs.push(("risk", risk::ensemble_risk(&q)?));
        }
        (Some(alpha), None, Some(MuArg::Opt)) => {
            let opt = risk::optimal_mu(alpha, gamma, sigma)?;
            pairs.push(("mu_star", opt.mu_star));
            pairs.push(("risk", opt.risk));
        }
        (Some(alpha), None, Some(MuArg::Fixed(mu))) => {
            let mut q = TheoryQuery::new(alpha, eta, gamma, sigma, EnsembleSize::Infinite);
            q.mu = mu;
            pairs.push(("risk", risk::mu_scaled_risk(&q)?));
        }
        // --mu requires --alpha and conflicts with --k at the parser
        _ => unreachable!(),
    }
    pairs.push(("ridge", risk::optimal_ridge_risk(gamma, sigma)?));
    print_pairs(&pairs, format);
    Ok(())
}

fn run_simulate(args: &SimulateArgs, format: Format) -> Result<()> {
    let spec = ProblemSpec {
        n: args.n,
        p: args.p,
        sigma: args.sigma,
        beta_mode: BetaMode::UnitSphere,
        seed: args.seed,
    };
    let scheme = SubsampleScheme::fixed(args.alpha, args.eta)?;
    let rows = montecarlo::risk_convergence_sim(&spec, &scheme, &args.k, args.trials)?;
    match format {
        Format::Kv => {
            for row in &rows {
                println!("mean_risk_k{}={}", row.k, dec6(row.mean_risk));
                println!("se_k{}={}", row.k, dec6(row.std_error));
            }
        }
        Format::Csv => {
            println!("k,mean_risk,se");
            for row in &rows {
                println!("{},{},{}", row.k, sig6(row.mean_risk), sig6(row.std_error));
            }
        }
        Format::Json => println!("{}", serde_json::to_string(&rows)?),
    }
    Ok(())
}

fn resolve_config(
    config: &Option<PathBuf>,
    output: &Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if output.is_some() {
        cfg.output_dir = output.clone();
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_figure(args: &FigureArgs, format: Format) -> Result<()> {
    let mut cfg = resolve_config(&args.config, &args.output, args.seed)?;
    if args.trials.is_some() {
        cfg.trials = args.trials;
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if args.sigma.is_some() {
        cfg.sigma = args.sigma;
    }
    if args.k.is_some() {
        cfg.k_grid = args.k.clone();
    }
    cfg.validate()?;
    let out: FigureOutput = match args.number {
        2 => experiments::run_figure2(&cfg)?,
        3 => experiments::run_figure3(&cfg)?,
        _ => experiments::run_figure4(&cfg)?,
    };
    let fields = [
        ("csv", out.csv_path.display().to_string()),
        ("manifest", out.manifest_path.display().to_string()),
        ("rows", out.rows.to_string()),
        ("config_hash", out.config_hash.clone()),
    ];
    match format {
        Format::Kv => {
            for (key, value) in &fields {
                println!("{key}={value}");
            }
        }
        Format::Csv => {
            println!("csv,manifest,rows,config_hash");
            let cells: Vec<&str> = fields.iter().map(|(_, v)| v.as_str()).collect();
            println!("{}", cells.join(","));
        }
        Format::Json => {
            let obj: serde_json::Map<String, serde_json::Value> = fields
                .iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            println!("{}", serde_json::Value::Object(obj));
        }
    }
    Ok(())
}

fn run_validate(args: &ValidateArgs, format: Format) -> Result<ExitCode> {
    let mut cfg = resolve_config(&args.config, &args.output, args.seed)?;
    if args.pair_trials.is_some() {
        cfg.pair_trials = args.pair_trials;
    }
    if args.identity_trials.is_some() {
        cfg.identity_trials = args.identity_trials;
    }
    cfg.validate()?;
    let report = experiments::run_validation(&cfg)?;
    match format {
        Format::Kv => {
            for check in &report.checks {
                let verdict = if check.passed { "pass" } else { "fail" };
                println!("{}={verdict}", check.name);
            }
            println!("passed={}", report.passed);
        }
        Format::Csv => {
            println!("name,passed,statistic,threshold");
            for check in &report.checks {
                println!(
                    "{},{},{},{}",
                    check.name,
                    check.passed,
                    sig6(check.statistic),
                    sig6(check.threshold)
                );
            }
        }
        Format::Json => println!("{}", serde_json::to_string(&report)?),
    }
    Ok(ExitCode::from(if report.passed { 0 } else { 1 }))
}

fn print_pairs(pairs: &[(&str, f64)], format: Format) {
    match format {
        Format::Kv => {
            for (key, value) in pairs {
                println!("{key}={}", dec6(*value));
            }
        }
        Format::Csv => {
            let keys: Vec<&str> = pairs.iter().map(|(k, _)| *k).collect();
            let cells: Vec<String> = pairs.iter().map(|(_, v)| sig6(*v)).collect();
            println!("{}", keys.join(","));
            println!("{}", cells.join(","));
        }
        Format::Json => {
            let obj: serde_json::Map<String, serde_json::Value> = pairs
                .iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            println!("{}", serde_json::Value::Object(obj));
        }
    }
}
