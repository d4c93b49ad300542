//! Predictors: subsampled least-squares members, their ensembles, ridge,
//! dropout closed forms, and minimum-norm interpolating members.
//!
//! A member sees only the rows `T` and columns `S` of the design; its fitted
//! coefficients live on `S` and are scattered back to a length-`p` vector
//! that is zero elsewhere. The ensemble prediction averages member
//! coefficients and applies an output scale `mu`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::datagen::ProblemInstance;
use crate::sampling::{SubsampleScheme, SubsetPair, draw_subsets};
use crate::solve;
use crate::{Error, Result};

/// Default cap on `p * n` when materializing a dense prediction map.
pub const DEFAULT_MAP_BUDGET: usize = 4_000_000;

/// One fitted member: its subsets and the scattered coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberFit {
    pub pair: SubsetPair,
    /// Length `p`, zero outside the feature subset.
    pub coef: DVector<f64>,
    /// True when the member submatrix was numerically rank-deficient and the
    /// solve fell back to the SVD pseudoinverse.
    pub rank_deficient: bool,
}

/// A fitted ensemble; the predictor's coefficients are
/// `(mu / k) * sum of member coefficients`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFit {
    pub members: Vec<MemberFit>,
    pub mu: f64,
}

impl EnsembleFit {
    pub fn k(&self) -> usize {
        self.members.len()
    }
}

pub(crate) fn gather(x: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| x[(rows[i], cols[j])])
}

pub(crate) fn gather_vec(y: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| y[rows[i]])
}

fn scatter_coef(p: usize, features: &[usize], values: &DVector<f64>) -> DVector<f64> {
    let mut coef = DVector::zeros(p);
    for (slot, &j) in features.iter().enumerate() {
        coef[j] = values[slot];
    }
    coef
}

fn check_pair_bounds(inst: &ProblemInstance, pair: &SubsetPair) -> Result<()> {
    let (n, p) = inst.x.shape();
    if pair.features.iter().any(|&j| j >= p) || pair.examples.iter().any(|&i| i >= n) {
        return Err(Error::DimensionMismatch(format!(
            "subset indices exceed the {n} x {p} design"
        )));
    }
    Ok(())
}

/// Least-squares fit of one overdetermined member (`|S| < |T| - 1`).
pub fn fit_subsampled_ols(inst: &ProblemInstance, pair: &SubsetPair) -> Result<MemberFit> {
    check_pair_bounds(inst, pair)?;
    let (s, t) = (pair.features.len(), pair.examples.len());
    if s + 1 >= t {
        return Err(Error::ConstraintInfeasible { s, t });
    }
    let a = gather(&inst.x, &pair.examples, &pair.features);
    let b = gather_vec(&inst.y, &pair.examples);
    let out = solve::lstsq(&a, &b)?;
    Ok(MemberFit {
        pair: pair.clone(),
        coef: scatter_coef(inst.x.ncols(), &pair.features, &out.solution),
        rank_deficient: out.rank_deficient,
    })
}

/// Minimum-norm fit of one underdetermined member (`|T| < |S|`).
///
/// Such pairs are built directly by the caller; [`draw_subsets`] only
/// produces overdetermined ones.
pub fn fit_min_norm_member(inst: &ProblemInstance, pair: &SubsetPair) -> Result<MemberFit> {
    check_pair_bounds(inst, pair)?;
    let (s, t) = (pair.features.len(), pair.examples.len());
    if t >= s {
        return Err(Error::InvalidParameter(format!(
            "minimum-norm member needs |T| < |S|, got |T| = {t}, |S| = {s}"
        )));
    }
    let a = gather(&inst.x, &pair.examples, &pair.features);
    let b = gather_vec(&inst.y, &pair.examples);
    let out = solve::min_norm(&a, &b)?;
    Ok(MemberFit {
        pair: pair.clone(),
        coef: scatter_coef(inst.x.ncols(), &pair.features, &out.solution),
        rank_deficient: out.rank_deficient,
    })
}

/// Draws `k` subset pairs from `rng`, then fits the members in parallel.
///
/// All draws happen up front on the caller's stream, so the result does not
/// depend on how the fits are scheduled. `mu` starts at 1.
pub fn fit_ensemble(
    inst: &ProblemInstance,
    scheme: &SubsampleScheme,
    k: usize,
    rng: &mut impl Rng,
) -> Result<EnsembleFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("ensemble needs k >= 1".into()));
    }
    let (n, p) = inst.x.shape();
    let pairs: Vec<SubsetPair> = (0..k)
        .map(|_| draw_subsets(scheme, p, n, rng))
        .collect::<Result<_>>()?;
    let members: Vec<MemberFit> = pairs
        .par_iter()
        .map(|pair| fit_subsampled_ols(inst, pair))
        .collect::<Result<_>>()?;
    Ok(EnsembleFit { members, mu: 1.0 })
}

/// `(mu / k) * sum of member coefficients`; empty for an empty ensemble.
pub fn ensemble_coefficients(fit: &EnsembleFit) -> DVector<f64> {
    let Some(first) = fit.members.first() else {
        return DVector::zeros(0);
    };
    let mut acc = DVector::zeros(first.coef.len());
    for m in &fit.members {
        acc += &m.coef;
    }
    acc * (fit.mu / fit.members.len() as f64)
}

/// Solves `(X^T X + lambda I) b = X^T y`.
pub fn fit_ridge(inst: &ProblemInstance, lambda: f64) -> Result<DVector<f64>> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let (n, p) = inst.x.shape();
    if lambda == 0.0 && n < p {
        // the Gram matrix has rank at most n, so the unpenalized system is
        // singular regardless of the draw
        return Err(Error::SingularSystem("unregularized ridge with p > n"));
    }
    let mut gram = inst.x.transpose() * &inst.x;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    solve::solve_spd(gram, &(inst.x.transpose() * &inst.y))
}

/// Closed-form minimizer of the expected loss under feature dropout with
/// keep probability `alpha`:
/// `(1/alpha) (X^T X + ((1-alpha)/alpha) diag(X^T X))^{-1} X^T y`.
pub fn fit_dropout(inst: &ProblemInstance, alpha: f64) -> Result<DVector<f64>> {
    let p = inst.x.ncols();
    fit_generalized_dropout(inst, &vec![alpha; p], false)
}

/// Closed-form minimizer under per-feature keep probabilities `alpha[j]`,
/// solving `(X^T X + A^{-1} diag(X^T X)(I - A)) v = X^T y` with
/// `A = diag(alpha)` and returning `A^{-1} v`, or `v` itself when
/// `corrected` (the rescaled estimator).
pub fn fit_generalized_dropout(
    inst: &ProblemInstance,
    alphas: &[f64],
    corrected: bool,
) -> Result<DVector<f64>> {
    let p = inst.x.ncols();
    if alphas.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "got {} keep probabilities for {p} features",
            alphas.len()
        )));
    }
    if alphas.iter().any(|a| !a.is_finite() || *a <= 0.0 || *a > 1.0) {
        return Err(Error::InvalidParameter(
            "keep probabilities must lie in (0, 1]".into(),
        ));
    }
    if inst.x.nrows() < p && alphas.iter().all(|&a| a == 1.0) {
        // no diagonal loading at all and a rank-deficient Gram
        return Err(Error::SingularSystem("dropout with every feature kept and p > n"));
    }
    let mut gram = inst.x.transpose() * &inst.x;
    for j in 0..p {
        gram[(j, j)] += gram[(j, j)] * (1.0 - alphas[j]) / alphas[j];
    }
    let v = solve::solve_spd(gram, &(inst.x.transpose() * &inst.y))?;
    if corrected {
        Ok(v)
    } else {
        Ok(DVector::from_fn(p, |j, _| v[j] / alphas[j]))
    }
}

/// The `p x n` linear map of a single member: the pseudoinverse of the
/// member submatrix scattered to full coordinates, so that `map * y`
/// reproduces the member's coefficients.
pub fn member_linear_map(x: &DMatrix<f64>, pair: &SubsetPair) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let a = gather(x, &pair.examples, &pair.features);
    let (ap, _) = solve::pinv(&a)?;
    let mut map = DMatrix::zeros(p, n);
    for (slot_j, &j) in pair.features.iter().enumerate() {
        for (slot_i, &i) in pair.examples.iter().enumerate() {
            map[(j, i)] = ap[(slot_j, slot_i)];
        }
    }
    Ok(map)
}

/// Dense `p x n` map of the whole ensemble, `(mu/k) * sum of member maps`,
/// such that `map * y` equals [`ensemble_coefficients`].
///
/// Refuses instances with `p * n` beyond `budget`
/// (default [`DEFAULT_MAP_BUDGET`]); the dense map is a validation tool for
/// desk-scale problems, not a production path.
pub fn assemble_linear_map(
    fit: &EnsembleFit,
    inst: &ProblemInstance,
    budget: Option<usize>,
) -> Result<DMatrix<f64>> {
    let (n, p) = inst.x.shape();
    let budget = budget.unwrap_or(DEFAULT_MAP_BUDGET);
    if p.saturating_mul(n) > budget {
        return Err(Error::BudgetExceeded {
            rows: p,
            cols: n,
            budget,
        });
    }
    if fit.members.is_empty() {
        return Err(Error::EmptyInput("assemble_linear_map needs members"));
    }
    let partials: Vec<DMatrix<f64>> = fit
        .members
        .par_iter()
        .map(|m| member_linear_map(&inst.x, &m.pair))
        .collect::<Result<_>>()?;
    let mut acc = DMatrix::zeros(p, n);
    for part in &partials {
        acc += part;
    }
    Ok(acc * (fit.mu / fit.members.len() as f64))
}
