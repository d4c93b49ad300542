//! Scripted pipelines: three figure reproductions and the validation suite.
//!
//! Each pipeline resolves its settings (config file values overridden by
//! caller-supplied fields, defaults for the rest), hashes the resolved
//! settings, and stamps every CSV row with that hash and the seed. Output
//! files are byte-identical across reruns with the same settings.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::datagen::{BetaMode, ProblemSpec};
use crate::montecarlo::{self, IdentityCheck, MCReport, PairTermEstimates};
use crate::numfmt::sig6;
use crate::risk::{self, EnsembleSize, PairKind, PairSizes, TheoryQuery};
use crate::rng::{Domain, substream};
use crate::sampling::SubsampleScheme;
use crate::{Error, Result, datagen, estimators};

/// Seed used when neither the config file nor a flag provides one.
pub const DEFAULT_SEED: u64 = 42;

/// Partial pipeline settings; `None` means "use the default". Unknown JSON
/// fields are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n: Option<usize>,
    pub trials: Option<u64>,
    pub k_grid: Option<Vec<usize>>,
    pub gamma_list: Option<Vec<f64>>,
    pub sigma_grid: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub pair_trials: Option<u64>,
    pub identity_trials: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("trials", self.trials),
            ("pair_trials", self.pair_trials),
            ("identity_trials", self.identity_trials),
        ] {
            if value == Some(0) {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if let Some(n) = self.n {
            if n < 3 {
                return Err(Error::InvalidConfig("n must be at least 3".into()));
            }
        }
        if let Some(sigma) = self.sigma {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "sigma must be finite and nonnegative, got {sigma}"
                )));
            }
        }
        if let Some(grid) = &self.k_grid {
            if grid.is_empty() || grid.contains(&0) {
                return Err(Error::InvalidConfig(
                    "k_grid must be nonempty with entries >= 1".into(),
                ));
            }
        }
        for (name, grid) in [
            ("gamma_list", &self.gamma_list),
            ("sigma_grid", &self.sigma_grid),
        ] {
            if let Some(grid) = grid {
                if grid.is_empty() || grid.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} must be nonempty with positive finite entries"
                    )));
                }
            }
        }
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Where a pipeline wrote its artifacts.
#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: usize,
    pub config_hash: String,
}

fn default_k_grid() -> Vec<usize> {
    (0..=8).map(|e| 1usize << e).collect()
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| {
            let frac = if count == 1 {
                0.0
            } else {
                i as f64 / (count - 1) as f64
            };
            10f64.powf(a + frac * (b - a))
        })
        .collect()
}

/// First 12 hex digits of the SHA-256 of the canonical settings JSON.
fn settings_hash<T: Serialize>(settings: &T) -> Result<String> {
    let bytes = serde_json::to_vec(settings)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
}

// Independent instance/subset seeds per grid cell, stable under skips.
fn cell_seed(seed: u64, pipeline: u64, cell: u64) -> u64 {
    substream(seed, Domain::Experiment, (pipeline << 32) | cell).next_u64()
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    name: &str,
    seed: u64,
    hash: &str,
    settings: serde_json::Value,
    files: &[&str],
) -> Result<PathBuf> {
    let manifest = json!({
        "name": name,
        "seed": seed,
        "config_hash": hash,
        "settings": settings,
        "files": files,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Convergence of the ensemble risk in `k` across aspect ratios, against the
/// tuned ridge risk.
///
/// Feature rate is the large-ensemble optimum per `gamma`; the example rate
/// runs in two modes, `full` (every example) and `tight` (1.1 times the
/// interpolation threshold `alpha gamma`). Grid cells whose floor sizes
/// cannot satisfy `|S| + 1 < |T|` keep their rows with empty `mean_risk` and
/// `se` cells.
pub fn run_figure2(cfg: &ExperimentConfig) -> Result<FigureOutput> {
    cfg.validate()?;
    let n = cfg.n.unwrap_or(200);
    let sigma = cfg.sigma.unwrap_or(1.0);
    let trials = cfg.trials.unwrap_or(50);
    let k_grid = cfg.k_grid.clone().unwrap_or_else(default_k_grid);
    let gammas = cfg.gamma_list.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
    let seed = cfg.seed();

    let settings = json!({
        "pipeline": "figure2",
        "n": n,
        "sigma": sigma,
        "trials": trials,
        "k_grid": k_grid,
        "gamma_list": gammas,
        "seed": seed,
    });
    let hash = settings_hash(&settings)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (gi, &gamma) in gammas.iter().enumerate() {
        let alpha = risk::optimal_alpha(gamma, sigma)?;
        let ridge = risk::optimal_ridge_risk(gamma, sigma)?;
        let p = (gamma * n as f64).round() as usize;
        for (mi, &(mode, eta)) in [("full", 1.0), ("tight", 1.1 * alpha * gamma)]
            .iter()
            .enumerate()
        {
            let cell = (2 * gi + mi) as u64;
            let s = (alpha * p as f64).floor() as usize;
            let t = (eta * n as f64).floor() as usize;
            let feasible = p >= 1 && eta <= 1.0 && s + 1 < t;
            let tag = |k: usize, mean: String, se: String| {
                vec![
                    sig6(gamma),
                    mode.to_string(),
                    k.to_string(),
                    mean,
                    se,
                    sig6(ridge),
                    hash.clone(),
                    seed.to_string(),
                ]
            };
            if !feasible {
                rows.extend(k_grid.iter().map(|&k| tag(k, String::new(), String::new())));
                continue;
            }
            let spec = ProblemSpec {
                n,
                p,
                sigma,
                beta_mode: BetaMode::UnitSphere,
                seed: cell_seed(seed, 2, cell),
            };
            let scheme = SubsampleScheme::fixed(alpha, eta)?;
            let table = montecarlo::risk_convergence_sim(&spec, &scheme, &k_grid, trials)?;
            rows.extend(
                table
                    .iter()
                    .map(|row| tag(row.k, sig6(row.mean_risk), sig6(row.std_error))),
            );
        }
    }

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("fig2.csv");
    write_csv(
        &csv_path,
        "gamma,eta_mode,k,mean_risk,se,ridge_target,config_hash,seed",
        &rows,
    )?;
    let manifest_path = write_manifest(&dir, "figure2", seed, &hash, settings, &["fig2.csv"])?;
    Ok(FigureOutput {
        csv_path,
        manifest_path,
        rows: rows.len(),
        config_hash: hash,
    })
}

/// Risk across noise levels at aspect ratio 2, comparing the asymptotically
/// optimal feature rate against one tuned for each finite ensemble size.
pub fn run_figure3(cfg: &ExperimentConfig) -> Result<FigureOutput> {
    cfg.validate()?;
    let n = cfg.n.unwrap_or(200);
    let p = 2 * n;
    let gamma = 2.0;
    let trials = cfg.trials.unwrap_or(100);
    let k_grid = cfg.k_grid.clone().unwrap_or_else(default_k_grid);
    let sigmas = cfg
        .sigma_grid
        .clone()
        .unwrap_or_else(|| log_grid(0.1, 10.0, 5));
    let seed = cfg.seed();

    let settings = json!({
        "pipeline": "figure3",
        "n": n,
        "p": p,
        "trials": trials,
        "k_grid": k_grid,
        "sigma_grid": sigmas,
        "seed": seed,
    });
    let hash = settings_hash(&settings)?;

    let t = n;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut cell = 0u64;
    let simulate = |alpha: f64,
                        sigma: f64,
                        sub_grid: &[usize],
                        cell: u64|
     -> Result<Option<Vec<montecarlo::ConvergenceRow>>> {
        let s = (alpha * p as f64).floor() as usize;
        if s + 1 >= t {
            return Ok(None);
        }
        let spec = ProblemSpec {
            n,
            p,
            sigma,
            beta_mode: BetaMode::UnitSphere,
            seed: cell_seed(seed, 3, cell),
        };
        let scheme = SubsampleScheme::fixed(alpha, 1.0)?;
        montecarlo::risk_convergence_sim(&spec, &scheme, sub_grid, trials).map(Some)
    };

    for &sigma in &sigmas {
        let ridge = risk::optimal_ridge_risk(gamma, sigma)?;
        let tag = |mode: &str, k: usize, mean: String, se: String| {
            vec![
                sig6(sigma),
                mode.to_string(),
                k.to_string(),
                mean,
                se,
                sig6(ridge),
                hash.clone(),
                seed.to_string(),
            ]
        };

        let alpha_star = risk::optimal_alpha(gamma, sigma)?;
        let this_cell = cell;
        cell += 1;
        match simulate(alpha_star, sigma, &k_grid, this_cell)? {
            Some(table) => rows.extend(
                table
                    .iter()
                    .map(|r| tag("asymptotic_opt", r.k, sig6(r.mean_risk), sig6(r.std_error))),
            ),
            None => rows.extend(
                k_grid
                    .iter()
                    .map(|&k| tag("asymptotic_opt", k, String::new(), String::new())),
            ),
        }

        for &k in &k_grid {
            let alpha_k = risk::finite_k_optimal_alpha(gamma, sigma, 1.0, k as u64)?;
            let this_cell = cell;
            cell += 1;
            match simulate(alpha_k, sigma, &[k], this_cell)? {
                Some(table) => {
                    rows.push(tag(
                        "finite_k_opt",
                        k,
                        sig6(table[0].mean_risk),
                        sig6(table[0].std_error),
                    ));
                }
                None => rows.push(tag("finite_k_opt", k, String::new(), String::new())),
            }
        }
    }

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("fig3.csv");
    write_csv(
        &csv_path,
        "sigma,alpha_mode,k,mean_risk,se,ridge_target,config_hash,seed",
        &rows,
    )?;
    let manifest_path = write_manifest(&dir, "figure3", seed, &hash, settings, &["fig3.csv"])?;
    Ok(FigureOutput {
        csv_path,
        manifest_path,
        rows: rows.len(),
        config_hash: hash,
    })
}

/// Closed-form scaled-output risk across noise levels: feature rate at half
/// the optimum and at one half, output scale at one and at its optimum. No
/// simulation runs here.
pub fn run_figure4(cfg: &ExperimentConfig) -> Result<FigureOutput> {
    cfg.validate()?;
    let gamma = match &cfg.gamma_list {
        None => 0.5,
        Some(list) if list.len() == 1 => list[0],
        Some(_) => {
            return Err(Error::InvalidConfig(
                "this pipeline uses a single aspect ratio; pass one gamma".into(),
            ));
        }
    };
    let sigmas = cfg
        .sigma_grid
        .clone()
        .unwrap_or_else(|| log_grid(0.1, 10.0, 25));
    let seed = cfg.seed();

    let settings = json!({
        "pipeline": "figure4",
        "gamma": gamma,
        "sigma_grid": sigmas,
        "seed": seed,
    });
    let hash = settings_hash(&settings)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for &sigma in &sigmas {
        let alpha_star = risk::optimal_alpha(gamma, sigma)?;
        for (alpha_mode, alpha) in [("half_opt", alpha_star / 2.0), ("half", 0.5)] {
            for mu_mode in ["unit", "opt"] {
                let value = match mu_mode {
                    "unit" => {
                        let query =
                            TheoryQuery::new(alpha, 1.0, gamma, sigma, EnsembleSize::Infinite);
                        risk::mu_scaled_risk(&query)?
                    }
                    _ => risk::optimal_mu(alpha, gamma, sigma)?.risk,
                };
                rows.push(vec![
                    sig6(sigma),
                    alpha_mode.to_string(),
                    mu_mode.to_string(),
                    sig6(value),
                    hash.clone(),
                    seed.to_string(),
                ]);
            }
        }
    }

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("fig4.csv");
    write_csv(
        &csv_path,
        "sigma,alpha_mode,mu_mode,risk,config_hash,seed",
        &rows,
    )?;
    let manifest_path = write_manifest(&dir, "figure4", seed, &hash, settings, &["fig4.csv"])?;
    Ok(FigureOutput {
        csv_path,
        manifest_path,
        rows: rows.len(),
        config_hash: hash,
    })
}

/// One validation check: pass iff `statistic <= threshold`.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: serde_json::Value,
}

impl ValidationCheck {
    fn new(
        name: impl Into<String>,
        statistic: f64,
        threshold: f64,
        detail: serde_json::Value,
    ) -> Self {
        Self {
            name: name.into(),
            passed: statistic <= threshold,
            statistic,
            threshold,
            detail,
        }
    }
}

/// Outcome of the full validation suite.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub config_hash: String,
    pub passed: bool,
    pub checks: Vec<ValidationCheck>,
}

fn max_abs_z(reports: &[MCReport]) -> f64 {
    reports
        .iter()
        .filter_map(|r| r.z_score)
        .fold(0.0, |acc, z| acc.max(z.abs()))
}

fn pair_grid_check(n: usize, p: usize, sizes: PairSizes, trials: u64, seed: u64) -> Result<ValidationCheck> {
    let spec = ProblemSpec {
        n,
        p,
        sigma: 1.0,
        beta_mode: BetaMode::UnitSphere,
        seed,
    };
    let est: PairTermEstimates = montecarlo::estimate_pair_terms(&spec, &sizes, trials)?;
    let stat = max_abs_z(&[est.bias_ii, est.bias_ij, est.var_ii, est.var_ij]);
    Ok(ValidationCheck::new(
        format!("pair_terms_{n}x{p}"),
        stat,
        4.0,
        json!(est),
    ))
}

fn identity_check(
    name: &str,
    n: usize,
    p: usize,
    s: usize,
    trials: u64,
    seed: u64,
) -> Result<ValidationCheck> {
    let checks: Vec<IdentityCheck> = montecarlo::lemma_identity_checks(n, p, s, trials, seed)?;
    let reports: Vec<MCReport> = checks.iter().filter_map(|c| c.report).collect();
    Ok(ValidationCheck::new(
        name,
        max_abs_z(&reports),
        4.0,
        json!(checks),
    ))
}

fn finite_limit_check() -> Result<ValidationCheck> {
    const N: usize = 40_000;
    let combos = [(0.3, 0.9, 0.7), (0.25, 1.0, 2.0), (0.6, 0.8, 0.5)];
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (alpha, eta, gamma) in combos {
        let p = (gamma * N as f64).round() as usize;
        let s = (alpha * p as f64).round() as usize;
        let t = (eta * N as f64).round() as usize;
        let s_cap = (alpha * alpha * p as f64).round() as usize;
        let sizes = PairSizes::new(N, p, s, t, s_cap)?;
        let query = TheoryQuery::new(alpha, eta, gamma, 1.0, EnsembleSize::Infinite);
        for kind in [PairKind::Bias, PairKind::Variance] {
            for same in [true, false] {
                let finite = risk::finite_pair_term(kind, same, &sizes, 1.0, 1.0)?;
                let limit = risk::limiting_pair_term(kind, same, &query)?;
                let gap = ((finite - limit) / limit).abs();
                worst = worst.max(gap);
                detail.push(json!({
                    "alpha": alpha,
                    "eta": eta,
                    "gamma": gamma,
                    "kind": format!("{kind:?}"),
                    "same_member": same,
                    "finite": finite,
                    "limit": limit,
                    "relative_gap": gap,
                }));
            }
        }
    }
    Ok(ValidationCheck::new(
        "finite_terms_reach_their_limits",
        worst,
        0.01,
        serde_json::Value::Array(detail),
    ))
}

fn tuned_identity_check() -> Result<ValidationCheck> {
    let gammas = log_grid(0.1, 10.0, 20);
    let sigmas = log_grid(0.05, 10.0, 20);
    let mut worst = 0.0f64;
    for &gamma in &gammas {
        for &sigma in &sigmas {
            let alpha = risk::optimal_alpha(gamma, sigma)?;
            let tuned = risk::large_ensemble_risk(alpha, gamma, sigma)?;
            let ridge = risk::optimal_ridge_risk(gamma, sigma)?;
            let b = gamma * (sigma * sigma + 1.0) + 1.0;
            let quad = gamma * alpha * alpha - b * alpha + 1.0;
            worst = worst
                .max((tuned - (1.0 - alpha)).abs())
                .max((tuned - ridge).abs())
                .max(quad.abs());
        }
    }
    Ok(ValidationCheck::new(
        "tuned_risk_identities",
        worst,
        1e-12,
        json!({"gamma_points": gammas.len(), "sigma_points": sigmas.len()}),
    ))
}

fn dropout_checks(seed: u64) -> Result<Vec<ValidationCheck>> {
    let small = datagen::generate_problem(
        &ProblemSpec {
            n: 50,
            p: 20,
            sigma: 0.5,
            beta_mode: BetaMode::UnitSphere,
            seed,
        },
        0,
    )?;
    let mut worst_gap = 0.0f64;
    for alpha in [0.5, 0.8] {
        worst_gap = worst_gap.max(montecarlo::dropout_descent_gap(&small, alpha)?);
    }
    let descent = ValidationCheck::new(
        "dropout_descent_oracle",
        worst_gap,
        1e-6,
        json!({"n": 50, "p": 20, "alphas": [0.5, 0.8]}),
    );

    let uniform = estimators::fit_generalized_dropout(&small, &vec![0.7; 20], false)?;
    let plain = estimators::fit_dropout(&small, 0.7)?;
    let gap = (uniform - plain).amax();
    let consistency = ValidationCheck::new(
        "uniform_generalized_dropout",
        gap,
        1e-10,
        json!({"alpha": 0.7}),
    );

    // (1 - alpha_j) / alpha_j = lambda / n makes the corrected estimator a
    // ridge solve up to per-feature Gram-diagonal fluctuation
    let (n, p, lambda) = (2000usize, 1000usize, 100.0f64);
    let big = datagen::generate_problem(
        &ProblemSpec {
            n,
            p,
            sigma: 1.0,
            beta_mode: BetaMode::UnitSphere,
            seed: seed ^ 1,
        },
        0,
    )?;
    let alpha_j = n as f64 / (n as f64 + lambda);
    let corrected = estimators::fit_generalized_dropout(&big, &vec![alpha_j; p], true)?;
    let ridge = estimators::fit_ridge(&big, lambda)?;
    let rel = (&corrected - &ridge).norm() / ridge.norm();
    let tracks_ridge = ValidationCheck::new(
        "corrected_dropout_tracks_ridge",
        rel,
        0.05,
        json!({"n": n, "p": p, "lambda": lambda, "alpha": alpha_j}),
    );

    Ok(vec![descent, consistency, tracks_ridge])
}

/// Runs every statistical and algebraic check and writes `validation.json`
/// (plus a manifest) to the output directory. Failures are reported in the
/// returned summary, never raised as errors.
pub fn run_validation(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let seed = cfg.seed();
    let pair_trials = cfg.pair_trials.unwrap_or(10_000);
    let identity_trials = cfg.identity_trials.unwrap_or(100_000);

    let settings = json!({
        "pipeline": "validate",
        "pair_trials": pair_trials,
        "identity_trials": identity_trials,
        "seed": seed,
    });
    let hash = settings_hash(&settings)?;

    let mut checks = Vec::new();
    let pair_grid = [
        (40usize, 10usize, 5usize, 20usize, 3usize),
        (60, 15, 6, 30, 2),
        (50, 8, 4, 25, 4),
    ];
    for (i, &(n, p, s, t, s_cap)) in pair_grid.iter().enumerate() {
        let sizes = PairSizes::new(n, p, s, t, s_cap)?;
        checks.push(pair_grid_check(
            n,
            p,
            sizes,
            pair_trials,
            cell_seed(seed, 5, i as u64),
        )?);
    }
    checks.push(identity_check(
        "design_identity_checks",
        30,
        10,
        4,
        identity_trials,
        cell_seed(seed, 5, 100),
    )?);
    checks.push(identity_check(
        "inverse_wishart_checks",
        20,
        10,
        5,
        identity_trials,
        cell_seed(seed, 5, 101),
    )?);
    checks.push(finite_limit_check()?);
    checks.push(tuned_identity_check()?);
    checks.extend(dropout_checks(cell_seed(seed, 5, 200))?);

    let report = ValidationReport {
        seed,
        config_hash: hash.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    };

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("validation.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    write_manifest(&dir, "validate", seed, &hash, settings, &["validation.json"])?;
    Ok(report)
}
