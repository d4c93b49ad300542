//! Brute-force simulation oracles for the closed-form risk results.
//!
//! Every estimator here targets a quantity some `risk` function predicts
//! exactly, and reports agreement in standard-error units rather than with
//! absolute tolerances. Trials are mutually independent, each one derives
//! its generator from `(seed, trial index)`, and aggregation runs over
//! trial-ordered results, so reports are byte-identical across reruns and
//! thread counts.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{self, ProblemInstance, ProblemSpec};
use crate::estimators;
use crate::risk::{self, PairKind, PairSizes};
use crate::rng::{self, Domain, substream};
use crate::sampling::{self, SubsampleScheme, SubsetPair};
use crate::solve;
use crate::{Error, Result};

/// A Monte Carlo estimate with its precision and, when a closed form is
/// available, the predicted value and the disagreement in SE units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCReport {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
    pub theory_value: Option<f64>,
    pub z_score: Option<f64>,
}

impl MCReport {
    /// Sample mean and standard error, with `theory` attached when given.
    /// The z-score is omitted when every sample is identical (zero SE).
    pub fn from_samples(samples: &[f64], theory: Option<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::EmptyInput("fewer than two samples"));
        }
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std_error = (ss / (m - 1.0) / m).sqrt();
        let z_score =
            theory.and_then(|t| (std_error > 0.0).then(|| (mean - t) / std_error));
        Ok(Self {
            estimate: mean,
            std_error,
            trials: samples.len() as u64,
            theory_value: theory,
            z_score,
        })
    }
}

/// Exact conditional risk of a linear estimator, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskBreakdown {
    pub bias: f64,
    pub variance: f64,
    pub risk: f64,
}

/// Squared coefficient error `|beta - beta_hat|^2`. With an isotropic test
/// distribution this is the exact expected squared prediction error, so no
/// test points are sampled.
pub fn empirical_risk(beta: &DVector<f64>, beta_hat: &DVector<f64>) -> Result<f64> {
    if beta.len() != beta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient lengths {} and {} differ",
            beta.len(),
            beta_hat.len()
        )));
    }
    Ok((beta - beta_hat).norm_squared())
}

/// Exact risk of the estimator `y -> map * y` on `y = x beta + sigma z`,
/// averaged over standard normal noise `z` only: the bias part is
/// `|beta - map x beta|^2` and the noise part is `sigma^2 |map|_F^2`.
pub fn bias_variance_decomposition(
    map: &DMatrix<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma: f64,
) -> Result<RiskBreakdown> {
    let (n, p) = x.shape();
    if map.nrows() != p || map.ncols() != n || beta.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "map {}x{} with design {}x{} and {} coefficients",
            map.nrows(),
            map.ncols(),
            n,
            p,
            beta.len()
        )));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let fitted = map * (x * beta);
    let bias = (beta - fitted).norm_squared();
    let variance = sigma * sigma * map.norm_squared();
    Ok(RiskBreakdown {
        bias,
        variance,
        risk: bias + variance,
    })
}

/// The four per-pair expectations estimated by simulation, each against its
/// closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairTermEstimates {
    pub bias_ii: MCReport,
    pub bias_ij: MCReport,
    pub var_ii: MCReport,
    pub var_ij: MCReport,
}

/// Estimates the same-member and cross-member bias and variance terms.
///
/// Each trial draws a fresh design and one pair of members whose feature
/// subsets share exactly `s_cap` indices: `[p]` is permuted once and the two
/// subsets are carved out of the prefix, so the overlap is prescribed rather
/// than produced by rejection. Example subsets are drawn independently.
/// Bias samples are inner products of the two members' coefficient errors on
/// noiseless responses; variance samples are `sigma^2` times the Frobenius
/// inner product of the members' linear maps.
pub fn estimate_pair_terms(
    spec: &ProblemSpec,
    sizes: &PairSizes,
    trials: u64,
) -> Result<PairTermEstimates> {
    spec.validate()?;
    sizes.validate()?;
    if spec.n != sizes.n || spec.p != sizes.p {
        return Err(Error::DimensionMismatch(format!(
            "problem is {}x{} but sizes expect {}x{}",
            spec.n, spec.p, sizes.n, sizes.p
        )));
    }
    if trials < 2 {
        return Err(Error::InvalidParameter(
            "pair-term estimation needs at least two trials".into(),
        ));
    }
    let beta = datagen::draw_beta(
        spec.p,
        spec.beta_mode,
        &mut substream(spec.seed, Domain::Instance, 0),
    );
    let beta_norm_sq = beta.norm_squared();
    let fresh = sizes.s - sizes.s_cap;

    let rows: Vec<[f64; 4]> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<[f64; 4]> {
            let mut rng_x = substream(spec.seed, Domain::Instance, 1 + trial);
            let x = rng::normal_matrix(&mut rng_x, spec.n, spec.p);
            let mut rng_s = substream(spec.seed, Domain::Subsets, trial);
            let perm = sampling::permutation(&mut rng_s, spec.p);
            let mut si = perm[..sizes.s].to_vec();
            let mut sj: Vec<usize> = perm[..sizes.s_cap]
                .iter()
                .chain(&perm[sizes.s..sizes.s + fresh])
                .copied()
                .collect();
            si.sort_unstable();
            sj.sort_unstable();
            let ti = sampling::sample_without_replacement(&mut rng_s, spec.n, sizes.t);
            let tj = sampling::sample_without_replacement(&mut rng_s, spec.n, sizes.t);
            let pair_i = SubsetPair {
                features: si,
                examples: ti,
            };
            let pair_j = SubsetPair {
                features: sj,
                examples: tj,
            };

            let inst0 = ProblemInstance {
                y: &x * &beta,
                x,
                beta: beta.clone(),
            };
            let ui = &beta - estimators::fit_subsampled_ols(&inst0, &pair_i)?.coef;
            let uj = &beta - estimators::fit_subsampled_ols(&inst0, &pair_j)?.coef;
            let fi = estimators::member_linear_map(&inst0.x, &pair_i)?;
            let fj = estimators::member_linear_map(&inst0.x, &pair_j)?;
            let s2 = spec.sigma * spec.sigma;
            Ok([
                ui.dot(&ui),
                ui.dot(&uj),
                s2 * fi.norm_squared(),
                s2 * fi.dot(&fj),
            ])
        })
        .collect::<Result<_>>()?;

    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let theory = |kind, same| finite_term(kind, same, sizes, spec.sigma, beta_norm_sq);
    Ok(PairTermEstimates {
        bias_ii: MCReport::from_samples(&column(0), Some(theory(PairKind::Bias, true)?))?,
        bias_ij: MCReport::from_samples(&column(1), Some(theory(PairKind::Bias, false)?))?,
        var_ii: MCReport::from_samples(&column(2), Some(theory(PairKind::Variance, true)?))?,
        var_ij: MCReport::from_samples(&column(3), Some(theory(PairKind::Variance, false)?))?,
    })
}

fn finite_term(
    kind: PairKind,
    same: bool,
    sizes: &PairSizes,
    sigma: f64,
    beta_norm_sq: f64,
) -> Result<f64> {
    risk::finite_pair_term(kind, same, sizes, sigma, beta_norm_sq)
}

/// One expectation identity checked entrywise; `report` holds the worst
/// entry (largest |z|) and is `None` when the claim is vacuous at the given
/// sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub entries: usize,
    pub report: Option<MCReport>,
}

// Entrywise running sums for one matrix-valued statistic.
struct ClaimAcc {
    sum: DMatrix<f64>,
    sumsq: DMatrix<f64>,
}

impl ClaimAcc {
    fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            sum: DMatrix::zeros(nrows, ncols),
            sumsq: DMatrix::zeros(nrows, ncols),
        }
    }

    fn add(&mut self, stat: &DMatrix<f64>) {
        self.sum += stat;
        self.sumsq.zip_apply(stat, |acc, v| *acc += v * v);
    }

    fn merge(&mut self, other: &ClaimAcc) {
        self.sum += &other.sum;
        self.sumsq += &other.sumsq;
    }

    // Worst entry by |z|; entries whose statistic turned out deterministic
    // rank below every stochastic one and compare by |mean - target|.
    fn report(&self, trials: u64, target: &DMatrix<f64>) -> MCReport {
        let m = trials as f64;
        let mut worst = 0usize;
        let mut worst_rank = (false, f64::NEG_INFINITY);
        for idx in 0..self.sum.len() {
            let mean = self.sum[idx] / m;
            let var = ((self.sumsq[idx] - m * mean * mean) / (m - 1.0)).max(0.0);
            let se = (var / m).sqrt();
            let rank = if se > 0.0 {
                (true, ((mean - target[idx]) / se).abs())
            } else {
                (false, (mean - target[idx]).abs())
            };
            if rank > worst_rank {
                worst = idx;
                worst_rank = rank;
            }
        }
        let mean = self.sum[worst] / m;
        let var = ((self.sumsq[worst] - m * mean * mean) / (m - 1.0)).max(0.0);
        let se = (var / m).sqrt();
        MCReport {
            estimate: mean,
            std_error: se,
            trials,
            theory_value: Some(target[worst]),
            z_score: (se > 0.0).then(|| (mean - target[worst]) / se),
        }
    }
}

fn rows_at(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn cols_at(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn scatter_cols(m: &DMatrix<f64>, cols: &[usize], total: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), total);
    for (slot, &c) in cols.iter().enumerate() {
        out.set_column(c, &m.column(slot));
    }
    out
}

fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    a.clone()
        .cholesky()
        .map(|chol| chol.solve(&DMatrix::identity(k, k)))
        .ok_or(Error::SingularSystem("symmetric inverse"))
}

const CLAIM_NAMES: [&str; 6] = [
    "pinv_row_subset",
    "complement_cross_term",
    "row_subset_pinv_product",
    "row_subset_pinv_bilinear",
    "inverse_gram_moment",
    "gram_pinv_moment",
];

const LEMMA_BLOCK: u64 = 256;

/// Entrywise Monte Carlo checks of six expectation identities for a standard
/// normal `n x p` design `X` and a uniform size-`subset_size` feature subset
/// `S`, redrawn every trial:
///
/// - `pinv_row_subset`: rows `S` of `pinv(X)` minus `pinv(X[:, S])` average
///   to zero.
/// - `complement_cross_term`: `X[:, S^c]^T F pinv(X)[S, :]` averages to zero
///   for a test matrix `F` of standard normals drawn once per run.
/// - `row_subset_pinv_product`: with `M_r` the `p x n` scatter of
///   `pinv(X[T_r, :])` for independent row subsets of size `2p`,
///   `M_1 M_2^T` averages to `inv(X^T X)`.
/// - `row_subset_pinv_bilinear`: `M_1^T A M_2'` averages to
///   `pinv(X)^T A pinv(Y)` for an independent design `Y` (with `M_2'` built
///   from `Y`) and a fixed test matrix `A`.
/// - `inverse_gram_moment`: `inv(Z^T Z)` for `Z = X[:, S]` averages to
///   `I / (n - |S| - 1)`.
/// - `gram_pinv_moment`: `pinv(Z Z^T)` averages to
///   `(|S| / (n (n - |S| - 1))) I`.
///
/// Claims that are vacuous or lack finite moments at the given sizes come
/// back with `report: None`: the first two need a nonempty complement and
/// `n > p + 1`, the cross-fitted pair needs `2p < n` and `p >= 2`.
pub fn lemma_identity_checks(
    n: usize,
    p: usize,
    subset_size: usize,
    trials: u64,
    seed: u64,
) -> Result<Vec<IdentityCheck>> {
    let s = subset_size;
    if p == 0 || s == 0 || s > p {
        return Err(Error::InvalidParameter(format!(
            "subset size {s} must lie in [1, p] with p = {p}"
        )));
    }
    if n <= s + 1 {
        return Err(Error::ConstraintInfeasible { s, t: n });
    }
    if trials < 2 {
        return Err(Error::InvalidParameter(
            "identity checks need at least two trials".into(),
        ));
    }
    let run_ab = s < p && n > p + 1;
    let run_c = 2 * p < n && p >= 2;
    let t = 2 * p;

    let f_mat = rng::normal_matrix(&mut substream(seed, Domain::TestFunction, 0), n, s);
    let a_mat = rng::normal_matrix(&mut substream(seed, Domain::TestFunction, 1), p, p);

    let make_accs = || -> [Option<ClaimAcc>; 6] {
        [
            run_ab.then(|| ClaimAcc::new(s, n)),
            run_ab.then(|| ClaimAcc::new(p - s, n)),
            run_c.then(|| ClaimAcc::new(p, p)),
            run_c.then(|| ClaimAcc::new(n, n)),
            Some(ClaimAcc::new(s, s)),
            Some(ClaimAcc::new(n, n)),
        ]
    };

    let blocks = trials.div_ceil(LEMMA_BLOCK);
    let partials: Vec<[Option<ClaimAcc>; 6]> = (0..blocks)
        .into_par_iter()
        .map(|block| -> Result<[Option<ClaimAcc>; 6]> {
            let mut accs = make_accs();
            let lo = block * LEMMA_BLOCK;
            let hi = trials.min(lo + LEMMA_BLOCK);
            for trial in lo..hi {
                let mut rng_i = substream(seed, Domain::Instance, trial);
                let x = rng::normal_matrix(&mut rng_i, n, p);
                let mut rng_s = substream(seed, Domain::Subsets, trial);
                let s_idx = sampling::sample_without_replacement(&mut rng_s, p, s);

                if run_ab || run_c {
                    let (xp, _) = solve::pinv(&x)?;
                    if run_ab {
                        let xp_s = rows_at(&xp, &s_idx);
                        let (sub_pinv, _) = solve::pinv(&cols_at(&x, &s_idx))?;
                        accs[0].as_mut().unwrap().add(&(&xp_s - sub_pinv));

                        let comp: Vec<usize> =
                            (0..p).filter(|j| !s_idx.contains(j)).collect();
                        let stat = cols_at(&x, &comp).transpose() * &f_mat * xp_s;
                        accs[1].as_mut().unwrap().add(&stat);
                    }
                    if run_c {
                        let t1 = sampling::sample_without_replacement(&mut rng_s, n, t);
                        let t2 = sampling::sample_without_replacement(&mut rng_s, n, t);
                        let (p1, _) = solve::pinv(&rows_at(&x, &t1))?;
                        let m1 = scatter_cols(&p1, &t1, n);

                        let (p2, _) = solve::pinv(&rows_at(&x, &t2))?;
                        let m2 = scatter_cols(&p2, &t2, n);
                        let gram_inv = inverse_spd(&x.tr_mul(&x))?;
                        accs[2].as_mut().unwrap().add(&(&m1 * m2.transpose() - gram_inv));

                        let y = rng::normal_matrix(&mut rng_i, n, p);
                        let (p2y, _) = solve::pinv(&rows_at(&y, &t2))?;
                        let m2y = scatter_cols(&p2y, &t2, n);
                        let (yp, _) = solve::pinv(&y)?;
                        let stat = m1.transpose() * &a_mat * m2y
                            - xp.transpose() * &a_mat * yp;
                        accs[3].as_mut().unwrap().add(&stat);
                    }
                }

                let z_mat = cols_at(&x, &s_idx);
                let w = inverse_spd(&z_mat.tr_mul(&z_mat))?;
                accs[4].as_mut().unwrap().add(&w);
                let stat = &z_mat * &w * &w * z_mat.transpose();
                accs[5].as_mut().unwrap().add(&stat);
            }
            Ok(accs)
        })
        .collect::<Result<_>>()?;

    let mut totals = make_accs();
    for part in &partials {
        for (total, partial) in totals.iter_mut().zip(part) {
            if let (Some(total), Some(partial)) = (total.as_mut(), partial.as_ref()) {
                total.merge(partial);
            }
        }
    }

    let denom = (n - s - 1) as f64;
    let targets: [DMatrix<f64>; 6] = [
        DMatrix::zeros(s, n),
        DMatrix::zeros(p.saturating_sub(s), n),
        DMatrix::zeros(p, p),
        DMatrix::zeros(n, n),
        DMatrix::identity(s, s) / denom,
        DMatrix::identity(n, n) * (s as f64 / (n as f64 * denom)),
    ];

    Ok(CLAIM_NAMES
        .iter()
        .zip(totals.iter())
        .zip(targets.iter())
        .map(|((&name, acc), target)| IdentityCheck {
            name,
            entries: target.len(),
            report: acc.as_ref().map(|acc| acc.report(trials, target)),
        })
        .collect())
}

/// Mean empirical risk of the ensemble estimator at each ensemble size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub mean_risk: f64,
    pub std_error: f64,
}

/// Simulates the risk of the subsample ensemble across ensemble sizes.
///
/// Every `(k, trial)` cell draws a fresh instance and a fresh set of member
/// subsets from its own streams, so rows are independent across the grid
/// and reruns are exact.
pub fn risk_convergence_sim(
    spec: &ProblemSpec,
    scheme: &SubsampleScheme,
    k_grid: &[usize],
    trials: u64,
) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    if k_grid.is_empty() {
        return Err(Error::EmptyInput("empty ensemble-size grid"));
    }
    if k_grid.contains(&0) {
        return Err(Error::InvalidParameter("ensemble sizes must be >= 1".into()));
    }
    if trials < 2 {
        return Err(Error::InvalidParameter(
            "risk simulation needs at least two trials".into(),
        ));
    }
    let jobs: Vec<(usize, u64)> = (0..k_grid.len())
        .flat_map(|ki| (0..trials).map(move |trial| (ki, trial)))
        .collect();
    let samples: Vec<f64> = jobs
        .par_iter()
        .map(|&(ki, trial)| -> Result<f64> {
            let index = ki as u64 * trials + trial;
            let inst = datagen::generate_problem(spec, index)?;
            let mut rng_s = substream(spec.seed, Domain::Subsets, index);
            let fit = estimators::fit_ensemble(&inst, scheme, k_grid[ki], &mut rng_s)?;
            empirical_risk(&inst.beta, &estimators::ensemble_coefficients(&fit))
        })
        .collect::<Result<_>>()?;

    k_grid
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let chunk = &samples[ki * trials as usize..(ki + 1) * trials as usize];
            let report = MCReport::from_samples(chunk, None)?;
            Ok(ConvergenceRow {
                k,
                mean_risk: report.estimate,
                std_error: report.std_error,
            })
        })
        .collect()
}

/// Estimates the same-member variance term of minimum-norm interpolating
/// members fit on `t x s` submatrices with `t < s`, attaching the limiting
/// value at rates `alpha = s/p`, `eta = t/n`, `gamma = p/n`.
pub fn estimate_interpolator_variance(
    n: usize,
    p: usize,
    s: usize,
    t: usize,
    sigma: f64,
    trials: u64,
    seed: u64,
) -> Result<MCReport> {
    if s == 0 || s > p || t == 0 || t > n {
        return Err(Error::InvalidParameter(format!(
            "subset sizes ({s}, {t}) must fit inside a {n} x {p} design"
        )));
    }
    if trials < 2 {
        return Err(Error::InvalidParameter(
            "variance estimation needs at least two trials".into(),
        ));
    }
    let theory = risk::interpolator_variance_term(
        true,
        s as f64 / p as f64,
        t as f64 / n as f64,
        p as f64 / n as f64,
        sigma,
    )?;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut rng_i = substream(seed, Domain::Instance, trial);
            let x = rng::normal_matrix(&mut rng_i, n, p);
            let mut rng_s = substream(seed, Domain::Subsets, trial);
            let pair = SubsetPair {
                features: sampling::sample_without_replacement(&mut rng_s, p, s),
                examples: sampling::sample_without_replacement(&mut rng_s, n, t),
            };
            let map = estimators::member_linear_map(&x, &pair)?;
            Ok(sigma * sigma * map.norm_squared())
        })
        .collect::<Result<_>>()?;
    MCReport::from_samples(&samples, Some(theory))
}

/// Minimizes the expected dropout objective by gradient descent and returns
/// the largest absolute coefficient difference from the closed form.
///
/// With keep probability `alpha` and `G = X^T X`, the objective's curvature
/// is `H = alpha^2 G + alpha (1 - alpha) diag(G)` and its linear term is
/// `alpha X^T y`; descent runs at step `1 / lambda_max(H)` until the
/// gradient is below `1e-11` relative to the linear term.
pub fn dropout_descent_gap(inst: &ProblemInstance, alpha: f64) -> Result<f64> {
    let closed = estimators::fit_dropout(inst, alpha)?;
    let p = inst.x.ncols();
    let gram = inst.x.tr_mul(&inst.x);
    let g_diag = gram.diagonal();
    let mut h = gram * (alpha * alpha);
    for j in 0..p {
        h[(j, j)] += alpha * (1.0 - alpha) * g_diag[j];
    }
    let c = inst.x.tr_mul(&inst.y) * alpha;

    let mut v = DVector::from_element(p, (p as f64).sqrt().recip());
    for _ in 0..100 {
        v = &h * v;
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::SingularSystem("dropout curvature"));
        }
        v /= norm;
    }
    let step = (&h * &v).norm().recip();

    let tol = 1e-11 * c.amax().max(1.0);
    let mut b = DVector::zeros(p);
    for _ in 0..500_000 {
        let grad = &h * &b - &c;
        if grad.amax() <= tol {
            break;
        }
        b -= grad * step;
    }
    Ok((b - closed).amax())
}
