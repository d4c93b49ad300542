//! Closed-form prediction risk for subsampled least-squares ensembles.
//!
//! The risk of the averaged predictor splits into pairwise bias and variance
//! terms over member pairs. Same-member (i = j) and cross-member (i != j)
//! terms have exact finite-sample expectations as well as proportional limits
//! where `|S|/p -> alpha`, `|T|/n -> eta`, `p/n -> gamma`. This module
//! evaluates all of them, the large-ensemble limit, the matching optimal
//! ridge risk, scaled-output corrections, and the variance terms of
//! minimum-norm (interpolating) members.
//!
//! Every function validates its domain and returns a typed error instead of
//! an infinity; experiment pipelines rely on that.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which half of the risk decomposition a pairwise term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Bias,
    Variance,
}

/// Ensemble size in a theory query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleSize {
    Finite(u64),
    Infinite,
}

/// Inputs of the limiting theory: rates, aspect ratio, noise, ensemble size
/// and output scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryQuery {
    /// Feature rate, `|S|/p` limit, in `[0, 1]`.
    pub alpha: f64,
    /// Example rate, `|T|/n` limit, in `(0, 1]`.
    pub eta: f64,
    /// Aspect ratio, `p/n` limit, positive.
    pub gamma: f64,
    /// Noise scale, nonnegative.
    pub sigma: f64,
    pub k: EnsembleSize,
    /// Output scale applied to the averaged coefficients.
    pub mu: f64,
}

impl TheoryQuery {
    pub fn new(alpha: f64, eta: f64, gamma: f64, sigma: f64, k: EnsembleSize) -> Self {
        Self {
            alpha,
            eta,
            gamma,
            sigma,
            k,
            mu: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        validate_rates(self.alpha, self.eta, self.gamma, self.sigma)?;
        if let EnsembleSize::Finite(0) = self.k {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

fn validate_rates(alpha: f64, eta: f64, gamma: f64, sigma: f64) -> Result<()> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if !eta.is_finite() || !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eta must lie in (0, 1], got {eta}"
        )));
    }
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Requires `eta > alpha * gamma`, the overdetermined-member condition.
fn guard_same(alpha: f64, eta: f64, gamma: f64) -> Result<()> {
    if eta <= alpha * gamma {
        return Err(Error::OutsideDomain(format!(
            "same-member terms need eta > alpha * gamma, got eta = {eta}, alpha * gamma = {}",
            alpha * gamma
        )));
    }
    Ok(())
}

/// Requires `alpha^2 * gamma < 1`, the cross-member denominator condition.
fn guard_cross(alpha: f64, gamma: f64) -> Result<()> {
    if alpha * alpha * gamma >= 1.0 {
        return Err(Error::OutsideDomain(format!(
            "cross-member terms need alpha^2 * gamma < 1, got {}",
            alpha * alpha * gamma
        )));
    }
    Ok(())
}

/// Subset cardinalities entering the exact finite-sample pairwise terms.
///
/// Both members use feature subsets of size `s` and example subsets of size
/// `t`; `s_cap` is the shared feature count `|S_i ∩ S_j|`, and `sc_cap` the
/// shared complement `|S_i^c ∩ S_j^c|`. With equal sizes the latter is pinned
/// by inclusion-exclusion to `p - 2 s + s_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSizes {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub t: usize,
    pub s_cap: usize,
    pub sc_cap: usize,
}

impl PairSizes {
    pub fn new(n: usize, p: usize, s: usize, t: usize, s_cap: usize) -> Result<Self> {
        if 2 * s < s_cap || p + s_cap < 2 * s {
            return Err(Error::InvalidParameter(format!(
                "no pair of size-{s} subsets of [{p}] can share exactly {s_cap} features"
            )));
        }
        let sizes = Self {
            n,
            p,
            s,
            t,
            s_cap,
            sc_cap: p + s_cap - 2 * s,
        };
        sizes.validate()?;
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            n,
            p,
            s,
            t,
            s_cap,
            sc_cap,
        } = *self;
        if p == 0 || n < 3 {
            return Err(Error::InvalidParameter(format!(
                "need p >= 1 and n >= 3, got p = {p}, n = {n}"
            )));
        }
        if s_cap > s || s > p || t > n {
            return Err(Error::InvalidParameter(format!(
                "need s_cap <= s <= p and t <= n, got s_cap = {s_cap}, s = {s}, t = {t}"
            )));
        }
        if s + 1 >= t {
            return Err(Error::ConstraintInfeasible { s, t });
        }
        if s_cap + 1 >= n {
            return Err(Error::OutsideDomain(format!(
                "cross-member denominator needs s_cap < n - 1, got s_cap = {s_cap}, n = {n}"
            )));
        }
        if sc_cap != p + s_cap - 2 * s {
            return Err(Error::InvalidParameter(format!(
                "sc_cap must equal p - 2s + s_cap = {}, got {sc_cap}",
                p + s_cap - 2 * s
            )));
        }
        Ok(())
    }
}

/// Exact finite-sample expectation of one pairwise term, conditional on the
/// subset cardinalities, for a signal of squared norm `beta_norm_sq`.
pub fn finite_pair_term(
    kind: PairKind,
    same_member: bool,
    sizes: &PairSizes,
    sigma: f64,
    beta_norm_sq: f64,
) -> Result<f64> {
    sizes.validate()?;
    if !sigma.is_finite() || sigma < 0.0 || !beta_norm_sq.is_finite() || beta_norm_sq < 0.0 {
        return Err(Error::InvalidParameter(
            "sigma and beta_norm_sq must be finite and >= 0".into(),
        ));
    }
    let (n, p) = (sizes.n as f64, sizes.p as f64);
    let (s, t) = (sizes.s as f64, sizes.t as f64);
    let (s_cap, sc_cap) = (sizes.s_cap as f64, sizes.sc_cap as f64);
    Ok(match (kind, same_member) {
        (PairKind::Bias, true) => (p - s) / p * (1.0 + s / (t - s - 1.0)) * beta_norm_sq,
        (PairKind::Bias, false) => {
            sc_cap / p * (1.0 + s_cap / (n - s_cap - 1.0)) * beta_norm_sq
        }
        (PairKind::Variance, true) => sigma * sigma * s / (t - s - 1.0),
        (PairKind::Variance, false) => sigma * sigma * s_cap / (n - s_cap - 1.0),
    })
}

/// Proportional limit of one pairwise term at unit signal norm.
pub fn limiting_pair_term(kind: PairKind, same_member: bool, q: &TheoryQuery) -> Result<f64> {
    q.validate()?;
    let TheoryQuery {
        alpha, eta, gamma, sigma, ..
    } = *q;
    if same_member {
        guard_same(alpha, eta, gamma)?;
    } else {
        guard_cross(alpha, gamma)?;
    }
    Ok(match (kind, same_member) {
        (PairKind::Bias, true) => (1.0 - alpha) * eta / (eta - alpha * gamma),
        (PairKind::Bias, false) => {
            (1.0 - alpha) * (1.0 - alpha) / (1.0 - alpha * alpha * gamma)
        }
        (PairKind::Variance, true) => sigma * sigma * alpha * gamma / (eta - alpha * gamma),
        (PairKind::Variance, false) => {
            sigma * sigma * alpha * alpha * gamma / (1.0 - alpha * alpha * gamma)
        }
    })
}

fn k_weights(k: EnsembleSize) -> (f64, f64) {
    match k {
        EnsembleSize::Finite(k) => {
            let k = k as f64;
            ((k - 1.0) / k, 1.0 / k)
        }
        EnsembleSize::Infinite => (1.0, 0.0),
    }
}

/// Limiting bias of the size-`k` ensemble: cross and same terms mixed with
/// weights `(k-1)/k` and `1/k`.
pub fn ensemble_bias(q: &TheoryQuery) -> Result<f64> {
    let cross = limiting_pair_term(PairKind::Bias, false, q)?;
    let (w_cross, w_same) = k_weights(q.k);
    if w_same == 0.0 {
        return Ok(cross);
    }
    let same = limiting_pair_term(PairKind::Bias, true, q)?;
    Ok(w_cross * cross + w_same * same)
}

/// Limiting variance of the size-`k` ensemble, mixed like [`ensemble_bias`].
pub fn ensemble_variance(q: &TheoryQuery) -> Result<f64> {
    let cross = limiting_pair_term(PairKind::Variance, false, q)?;
    let (w_cross, w_same) = k_weights(q.k);
    if w_same == 0.0 {
        return Ok(cross);
    }
    let same = limiting_pair_term(PairKind::Variance, true, q)?;
    Ok(w_cross * cross + w_same * same)
}

/// Limiting risk of the size-`k` ensemble at unit output scale.
///
/// Needs `eta > alpha * gamma` and `alpha^2 * gamma < 1`. An infinite `k`
/// dispatches to [`large_ensemble_risk`].
pub fn ensemble_risk(q: &TheoryQuery) -> Result<f64> {
    q.validate()?;
    if q.mu != 1.0 {
        return Err(Error::InvalidParameter(
            "ensemble_risk is defined at mu = 1; use mu_scaled_risk for scaled output".into(),
        ));
    }
    match q.k {
        EnsembleSize::Infinite => large_ensemble_risk(q.alpha, q.gamma, q.sigma),
        EnsembleSize::Finite(_) => Ok(ensemble_bias(q)? + ensemble_variance(q)?),
    }
}

/// Risk of the infinite ensemble: `((1-a)^2 + s^2 a^2 g) / (1 - a^2 g)`.
pub fn large_ensemble_risk(alpha: f64, gamma: f64, sigma: f64) -> Result<f64> {
    validate_rates(alpha, 1.0, gamma, sigma)?;
    guard_cross(alpha, gamma)?;
    let a2g = alpha * alpha * gamma;
    Ok(((1.0 - alpha) * (1.0 - alpha) + sigma * sigma * a2g) / (1.0 - a2g))
}

/// Feature rate minimizing the large-ensemble risk.
///
/// The minimizer is the smaller root of `g a^2 - (g (s^2 + 1) + 1) a + 1`,
/// computed in the product form `2 / (b + sqrt(b^2 - 4 g))` to avoid
/// subtractive cancellation for small `gamma`. Always lands in
/// `[0, min(1, 1/gamma)]`.
pub fn optimal_alpha(gamma: f64, sigma: f64) -> Result<f64> {
    validate_rates(0.0, 1.0, gamma, sigma)?;
    let b = gamma * (sigma * sigma + 1.0) + 1.0;
    // discriminant >= (gamma - 1)^2; clamp fp dust at sigma near 0, gamma near 1
    let disc = (b * b - 4.0 * gamma).max(0.0);
    Ok(2.0 / (b + disc.sqrt()))
}

/// Minimal risk of optimally tuned ridge regression under the isotropic
/// Gaussian prior, as a function of `(gamma, sigma)` only.
///
/// Equal to the large-ensemble risk at [`optimal_alpha`]. The branch with
/// `(gamma-1)/gamma < sigma^2` is rationalized for the same cancellation
/// reason as [`optimal_alpha`].
pub fn optimal_ridge_risk(gamma: f64, sigma: f64) -> Result<f64> {
    validate_rates(0.0, 1.0, gamma, sigma)?;
    let s2 = sigma * sigma;
    let c = (gamma - 1.0) / gamma - s2;
    let root = (c * c + 4.0 * s2).sqrt();
    if c >= 0.0 {
        Ok(0.5 * (c + root))
    } else {
        Ok(2.0 * s2 / (root - c))
    }
}

/// Large-ensemble risk when the averaged output is multiplied by `mu`.
pub fn mu_scaled_risk(q: &TheoryQuery) -> Result<f64> {
    if !matches!(q.k, EnsembleSize::Infinite) {
        return Err(Error::InvalidParameter(
            "mu-scaled risk is a large-ensemble quantity; set k to Infinite".into(),
        ));
    }
    q.validate()?;
    let r = large_ensemble_risk(q.alpha, q.gamma, q.sigma)?;
    let mu = q.mu;
    Ok(mu * mu * r + (1.0 - mu) * (1.0 - mu) + 2.0 * mu * (1.0 - mu) * (1.0 - q.alpha))
}

/// Optimal output scale and the risk it attains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuOptimum {
    pub mu_star: f64,
    pub risk: f64,
}

/// Minimizes the quadratic-in-`mu` scaled risk: `mu* = alpha / (R + 2 alpha - 1)`
/// with minimum `1 - alpha^2 / (R + 2 alpha - 1)`, `R` the unscaled
/// large-ensemble risk.
pub fn optimal_mu(alpha: f64, gamma: f64, sigma: f64) -> Result<MuOptimum> {
    let r = large_ensemble_risk(alpha, gamma, sigma)?;
    let den = r + 2.0 * alpha - 1.0;
    if den.abs() < 1e-14 {
        return Err(Error::DegenerateDenominator(
            "optimal output scale (risk curvature vanishes at alpha = 0)",
        ));
    }
    Ok(MuOptimum {
        mu_star: alpha / den,
        risk: 1.0 - alpha * alpha / den,
    })
}

/// Limiting variance terms for minimum-norm interpolating members, where the
/// member subproblem is underdetermined (`eta < alpha * gamma`).
pub fn interpolator_variance_term(
    same_member: bool,
    alpha: f64,
    eta: f64,
    gamma: f64,
    sigma: f64,
) -> Result<f64> {
    validate_rates(alpha, eta, gamma, sigma)?;
    if same_member {
        if alpha * gamma <= eta {
            return Err(Error::OutsideDomain(format!(
                "same-member interpolator term needs alpha * gamma > eta, got {} vs {eta}",
                alpha * gamma
            )));
        }
        Ok(sigma * sigma * eta / (alpha * gamma - eta))
    } else {
        if gamma <= eta * eta {
            return Err(Error::OutsideDomain(format!(
                "cross-member interpolator term needs gamma > eta^2, got gamma = {gamma}, eta^2 = {}",
                eta * eta
            )));
        }
        Ok(sigma * sigma * eta * eta / (gamma - eta * eta))
    }
}

/// Feature rate minimizing the finite-`k` limiting risk at fixed
/// `(gamma, sigma, eta)`, by golden-section search on the feasible interval
/// `(0, min(1, eta/gamma))` shrunk by 1e-6 at both ends.
pub fn finite_k_optimal_alpha(gamma: f64, sigma: f64, eta: f64, k: u64) -> Result<f64> {
    validate_rates(0.0, eta, gamma, sigma)?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    const MARGIN: f64 = 1e-6;
    let mut lo = MARGIN;
    let mut hi = (eta / gamma).min(1.0) - MARGIN;
    if hi <= lo {
        return Err(Error::InfeasibleInterval(format!(
            "no feasible alpha between {MARGIN} and min(1, eta/gamma) - {MARGIN} \
             at eta = {eta}, gamma = {gamma}"
        )));
    }
    let risk_at = |alpha: f64| -> Result<f64> {
        ensemble_risk(&TheoryQuery::new(
            alpha,
            eta,
            gamma,
            sigma,
            EnsembleSize::Finite(k),
        ))
    };
    // inverse golden ratio
    let w = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = hi - w * (hi - lo);
    let mut x2 = lo + w * (hi - lo);
    let mut f1 = risk_at(x1)?;
    let mut f2 = risk_at(x2)?;
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - w * (hi - lo);
            f1 = risk_at(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + w * (hi - lo);
            f2 = risk_at(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn q(alpha: f64, eta: f64, gamma: f64, sigma: f64, k: EnsembleSize) -> TheoryQuery {
        TheoryQuery::new(alpha, eta, gamma, sigma, k)
    }

    #[test]
    fn finite_bias_same_member_example() {
        let sizes = PairSizes::new(12, 10, 5, 10, 3).unwrap();
        let v = finite_pair_term(PairKind::Bias, true, &sizes, 1.0, 1.0).unwrap();
        assert_relative_eq!(v, 1.125, max_relative = 1e-15);
    }

    #[test]
    fn finite_variance_cross_member_example() {
        let sizes = PairSizes::new(40, 10, 5, 20, 5).unwrap();
        let v = finite_pair_term(PairKind::Variance, false, &sizes, 1.0, 1.0).unwrap();
        assert_relative_eq!(v, 5.0 / 34.0, max_relative = 1e-15);
    }

    #[test]
    fn disjoint_subsets_have_no_cross_inflation() {
        let sizes = PairSizes::new(40, 12, 5, 20, 0).unwrap();
        assert_eq!(sizes.sc_cap, 2);
        let v = finite_pair_term(PairKind::Bias, false, &sizes, 1.0, 1.0).unwrap();
        assert_relative_eq!(v, 2.0 / 12.0, max_relative = 1e-15);
        // variance needs shared features
        let w = finite_pair_term(PairKind::Variance, false, &sizes, 1.0, 1.0).unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn acceptance_size_combination_is_valid_and_matches_hand_values() {
        let sizes = PairSizes::new(40, 10, 5, 20, 3).unwrap();
        assert_eq!(sizes.sc_cap, 3);
        let b_ii = finite_pair_term(PairKind::Bias, true, &sizes, 1.0, 1.0).unwrap();
        let b_ij = finite_pair_term(PairKind::Bias, false, &sizes, 1.0, 1.0).unwrap();
        let v_ii = finite_pair_term(PairKind::Variance, true, &sizes, 1.0, 1.0).unwrap();
        let v_ij = finite_pair_term(PairKind::Variance, false, &sizes, 1.0, 1.0).unwrap();
        assert_relative_eq!(b_ii, 19.0 / 28.0, max_relative = 1e-15);
        assert_relative_eq!(b_ij, 0.325, max_relative = 1e-15);
        assert_relative_eq!(v_ii, 5.0 / 14.0, max_relative = 1e-15);
        assert_relative_eq!(v_ij, 1.0 / 12.0, max_relative = 1e-15);
    }

    #[test]
    fn pair_sizes_validation_rejects_bad_combinations() {
        // fewer than s + 2 examples
        assert!(PairSizes::new(40, 10, 5, 6, 3).is_err());
        // overlap exceeding the subset size
        assert!(PairSizes::new(40, 10, 3, 20, 4).is_err());
        // union exceeding p
        assert!(PairSizes::new(40, 8, 5, 20, 1).is_err());
        // s_cap too close to n
        assert!(PairSizes::new(6, 10, 5, 60, 5).is_err());
        // inconsistent complement overlap
        let mut sizes = PairSizes::new(40, 10, 5, 20, 3).unwrap();
        sizes.sc_cap = 4;
        assert!(sizes.validate().is_err());
    }

    #[test]
    fn limiting_terms_match_hand_values() {
        let query = q(0.5, 1.0, 0.5, 1.0, EnsembleSize::Infinite);
        let v = limiting_pair_term(PairKind::Variance, false, &query).unwrap();
        assert_relative_eq!(v, 0.125 / 0.875, max_relative = 1e-15);

        let null = q(0.0, 0.7, 3.0, 1.0, EnsembleSize::Infinite);
        assert_relative_eq!(
            limiting_pair_term(PairKind::Bias, true, &null).unwrap(),
            1.0,
            max_relative = 1e-15
        );

        let deep = q(0.25, 1.0, 2.0, 1.0, EnsembleSize::Infinite);
        assert_relative_eq!(
            limiting_pair_term(PairKind::Variance, true, &deep).unwrap(),
            1.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn limiting_terms_respect_domain_guards() {
        // eta <= alpha * gamma
        let bad = q(0.6, 0.5, 1.0, 1.0, EnsembleSize::Infinite);
        assert!(limiting_pair_term(PairKind::Bias, true, &bad).is_err());
        // alpha^2 gamma >= 1
        let bad2 = q(0.8, 1.0, 2.0, 1.0, EnsembleSize::Infinite);
        assert!(limiting_pair_term(PairKind::Bias, false, &bad2).is_err());
    }

    #[test]
    fn finite_k_risk_matches_hand_value() {
        let v = ensemble_risk(&q(0.25, 1.0, 2.0, 1.0, EnsembleSize::Finite(10))).unwrap();
        assert_relative_eq!(v, 67.0 / 70.0, max_relative = 1e-14);
    }

    #[test]
    fn full_sampling_gives_the_classical_risk_for_any_k() {
        for k in [EnsembleSize::Finite(1), EnsembleSize::Finite(7), EnsembleSize::Infinite] {
            let v = ensemble_risk(&q(1.0, 1.0, 0.5, 1.0, k)).unwrap();
            assert_relative_eq!(v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn huge_k_approaches_the_infinite_ensemble() {
        let fin = ensemble_risk(&q(0.3, 0.9, 1.5, 0.8, EnsembleSize::Finite(1_000_000))).unwrap();
        let inf = ensemble_risk(&q(0.3, 0.9, 1.5, 0.8, EnsembleSize::Infinite)).unwrap();
        assert_relative_eq!(fin, inf, max_relative = 1e-5);
    }

    #[test]
    fn risk_is_bias_plus_variance() {
        let query = q(0.3, 0.8, 1.2, 0.7, EnsembleSize::Finite(5));
        let total = ensemble_risk(&query).unwrap();
        let sum = ensemble_bias(&query).unwrap() + ensemble_variance(&query).unwrap();
        assert_relative_eq!(total, sum, max_relative = 1e-15);
    }

    #[test]
    fn risk_strictly_decreases_in_k_inside_the_domain() {
        for &alpha in &[0.1, 0.3, 0.5, 0.9] {
            for &gamma in &[0.25, 0.5, 1.0, 2.0] {
                for &eta in &[0.7, 1.0] {
                    if eta <= alpha * gamma || alpha * eta >= 1.0 {
                        continue;
                    }
                    for &sigma in &[0.0, 0.5, 2.0] {
                        let mut prev = f64::INFINITY;
                        for k in [1, 2, 4, 8, 64] {
                            let v = ensemble_risk(&q(
                                alpha,
                                eta,
                                gamma,
                                sigma,
                                EnsembleSize::Finite(k),
                            ))
                            .unwrap();
                            assert!(
                                v < prev,
                                "risk not decreasing at alpha={alpha} gamma={gamma} \
                                 eta={eta} sigma={sigma} k={k}: {v} >= {prev}"
                            );
                            prev = v;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn large_ensemble_risk_hand_values() {
        assert_relative_eq!(
            large_ensemble_risk(0.0, 2.0, 1.0).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            large_ensemble_risk(0.5, 0.5, 1.0).unwrap(),
            0.375 / 0.875,
            max_relative = 1e-15
        );
        assert!(large_ensemble_risk(0.8, 2.0, 1.0).is_err());
    }

    #[test]
    fn optimal_alpha_frozen_values() {
        assert_relative_eq!(
            optimal_alpha(1.0, 1.0).unwrap(),
            0.381_966_011_250_105_15,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            optimal_alpha(2.0, 1.0).unwrap(),
            0.219_223_593_595_584_85,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            optimal_alpha(0.5, 1.0).unwrap(),
            0.585_786_437_626_904_9,
            max_relative = 1e-15
        );
    }

    #[test]
    fn optimal_alpha_noiseless_limits() {
        assert_relative_eq!(optimal_alpha(2.0, 0.0).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(optimal_alpha(0.5, 0.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(optimal_alpha(1.0, 0.0).unwrap(), 1.0, max_relative = 1e-7);
    }

    #[test]
    fn optimal_alpha_stays_in_range_and_solves_its_quadratic() {
        for i in 0..20 {
            for j in 0..20 {
                let gamma = 10f64.powf(-1.0 + 2.0 * i as f64 / 19.0);
                let sigma = 10f64.powf(-1.301 + 2.301 * j as f64 / 19.0);
                let a = optimal_alpha(gamma, sigma).unwrap();
                assert!(a > 0.0 && a <= 1.0_f64.min(1.0 / gamma) + 1e-12);
                let b = gamma * (sigma * sigma + 1.0) + 1.0;
                let residual = gamma * a * a - b * a + 1.0;
                assert!(residual.abs() <= 1e-12, "residual {residual} at ({gamma}, {sigma})");
            }
        }
    }

    #[test]
    fn optimal_ridge_risk_frozen_values() {
        assert_relative_eq!(
            optimal_ridge_risk(1.0, 1.0).unwrap(),
            0.618_033_988_749_894_9,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            optimal_ridge_risk(0.5, 1.0).unwrap(),
            0.414_213_562_373_095_15,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            optimal_ridge_risk(2.0, 1.0).unwrap(),
            0.780_776_406_404_415_1,
            max_relative = 1e-15
        );
    }

    #[test]
    fn noiseless_ridge_risk_collapses_to_the_null_projection() {
        assert_eq!(optimal_ridge_risk(0.5, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            optimal_ridge_risk(4.0, 0.0).unwrap(),
            0.75,
            max_relative = 1e-14
        );
        assert_eq!(optimal_ridge_risk(1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn tuned_rate_identities_hold_on_a_log_grid() {
        for i in 0..20 {
            for j in 0..20 {
                let gamma = 10f64.powf(-1.0 + 2.0 * i as f64 / 19.0);
                let sigma = 10f64.powf(-1.301 + 2.301 * j as f64 / 19.0);
                let a = optimal_alpha(gamma, sigma).unwrap();
                let r = large_ensemble_risk(a, gamma, sigma).unwrap();
                assert!(
                    (r - (1.0 - a)).abs() <= 1e-12,
                    "risk vs 1 - alpha gap at ({gamma}, {sigma})"
                );
                let ridge = optimal_ridge_risk(gamma, sigma).unwrap();
                assert!(
                    (r - ridge).abs() <= 1e-12,
                    "risk vs ridge gap at ({gamma}, {sigma})"
                );
            }
        }
    }

    #[test]
    fn scaled_risk_and_its_optimum_match_hand_values() {
        let base = TheoryQuery {
            mu: 1.0,
            ..q(0.5, 1.0, 0.5, 1.0, EnsembleSize::Infinite)
        };
        assert_relative_eq!(
            mu_scaled_risk(&base).unwrap(),
            3.0 / 7.0,
            max_relative = 1e-15
        );
        let null = TheoryQuery { mu: 0.0, ..base };
        assert_relative_eq!(mu_scaled_risk(&null).unwrap(), 1.0, max_relative = 1e-15);

        let opt = optimal_mu(0.5, 0.5, 1.0).unwrap();
        assert_relative_eq!(opt.mu_star, 7.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(opt.risk, 5.0 / 12.0, max_relative = 1e-14);
        let at_opt = TheoryQuery {
            mu: opt.mu_star,
            ..base
        };
        assert_relative_eq!(mu_scaled_risk(&at_opt).unwrap(), opt.risk, max_relative = 1e-14);
    }

    #[test]
    fn scale_one_is_optimal_exactly_at_the_tuned_rate() {
        for &(gamma, sigma) in &[(0.5, 1.0), (1.0, 1.0), (2.0, 0.3), (0.2, 3.0)] {
            let a = optimal_alpha(gamma, sigma).unwrap();
            let opt = optimal_mu(a, gamma, sigma).unwrap();
            assert_relative_eq!(opt.mu_star, 1.0, max_relative = 1e-11);
            // above the tuned rate extra shrinkage helps, below it expansion helps
            assert!(optimal_mu((a * 1.2).min(1.0), gamma, sigma).unwrap().mu_star < 1.0);
            assert!(optimal_mu(a * 0.8, gamma, sigma).unwrap().mu_star > 1.0);
        }
    }

    #[test]
    fn zero_rate_has_no_useful_scale() {
        assert!(matches!(
            optimal_mu(0.0, 1.0, 1.0),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn scaled_risk_is_minimized_at_mu_star() {
        let opt = optimal_mu(0.35, 0.8, 1.3).unwrap();
        let base = q(0.35, 1.0, 0.8, 1.3, EnsembleSize::Infinite);
        for delta in [-1e-4, 1e-4] {
            let nearby = TheoryQuery {
                mu: opt.mu_star + delta,
                ..base
            };
            assert!(mu_scaled_risk(&nearby).unwrap() >= opt.risk);
        }
    }

    #[test]
    fn interpolator_terms_match_hand_values() {
        assert_relative_eq!(
            interpolator_variance_term(false, 1.0, 0.5, 1.0, 1.0).unwrap(),
            1.0 / 3.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            interpolator_variance_term(true, 1.0, 0.5, 1.0, 1.0).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_eq!(
            interpolator_variance_term(true, 1.0, 0.5, 1.0, 0.0).unwrap(),
            0.0
        );
        assert!(interpolator_variance_term(true, 0.4, 0.5, 1.0, 1.0).is_err());
        assert!(interpolator_variance_term(false, 1.0, 0.9, 0.5, 1.0).is_err());
    }

    #[test]
    fn finite_k_tuning_approaches_the_closed_form() {
        let tuned = finite_k_optimal_alpha(1.0, 1.0, 1.0, 1_000_000).unwrap();
        assert!((tuned - optimal_alpha(1.0, 1.0).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn small_ensembles_prefer_a_smaller_rate_at_low_noise() {
        let tuned = finite_k_optimal_alpha(2.0, 0.1, 1.0, 16).unwrap();
        let closed = optimal_alpha(2.0, 0.1).unwrap();
        assert!(tuned < closed, "tuned {tuned} vs closed {closed}");
        // local minimum
        let at = |a: f64| {
            ensemble_risk(&q(a, 1.0, 2.0, 0.1, EnsembleSize::Finite(16))).unwrap()
        };
        assert!(at(tuned - 1e-4) >= at(tuned));
        assert!(at(tuned + 1e-4) >= at(tuned));
    }

    #[test]
    fn degenerate_search_interval_is_reported() {
        assert!(matches!(
            finite_k_optimal_alpha(2e6, 1.0, 1.0, 4),
            Err(Error::InfeasibleInterval(_))
        ));
    }

    proptest! {
        #[test]
        fn risk_splits_decreases_in_k_and_dominates_the_limit(
            alpha in 0.05f64..0.95,
            eta_frac in 0.01f64..1.0,
            gamma in 0.1f64..3.0,
            sigma in 0.0f64..2.0,
            k in 1u64..500,
        ) {
            prop_assume!(alpha * gamma < 0.999);
            let lo = alpha * gamma;
            let eta = lo + eta_frac * (1.0 - lo);
            prop_assume!(eta > lo + 1e-6);

            let at = |k| ensemble_risk(&q(alpha, eta, gamma, sigma, k)).unwrap();
            let query = q(alpha, eta, gamma, sigma, EnsembleSize::Finite(k));
            let bias = ensemble_bias(&query).unwrap();
            let var = ensemble_variance(&query).unwrap();
            let risk = at(EnsembleSize::Finite(k));
            prop_assert!(bias >= 0.0 && var >= 0.0);
            prop_assert!((risk - (bias + var)).abs() <= 1e-12 * risk.max(1.0));

            let limit = at(EnsembleSize::Infinite);
            let next = at(EnsembleSize::Finite(2 * k));
            prop_assert!(next < risk);
            prop_assert!(limit < next);
        }

        #[test]
        fn tuned_rate_is_a_local_minimum_with_zero_quadratic_residual(
            gamma in 0.05f64..8.0,
            sigma in 0.05f64..5.0,
        ) {
            let alpha = optimal_alpha(gamma, sigma).unwrap();
            prop_assert!(alpha > 0.0 && alpha < 1.0);
            let b = gamma * (sigma * sigma + 1.0) + 1.0;
            let residual = gamma * alpha * alpha - b * alpha + 1.0;
            prop_assert!(residual.abs() <= 1e-12);

            let risk_at = |a: f64| large_ensemble_risk(a, gamma, sigma).unwrap();
            let tuned = risk_at(alpha);
            prop_assert!(risk_at(alpha * 0.999) >= tuned);
            prop_assert!(risk_at((alpha * 1.001).min(1.0)) >= tuned);
        }

        #[test]
        fn scaled_risk_is_never_below_its_optimum(
            alpha in 0.05f64..0.95,
            gamma in 0.1f64..3.0,
            sigma in 0.0f64..2.0,
            mu in -0.5f64..2.5,
        ) {
            prop_assume!(alpha * alpha * gamma < 0.999);
            let opt = optimal_mu(alpha, gamma, sigma).unwrap();
            let mut query = q(alpha, 1.0, gamma, sigma, EnsembleSize::Infinite);
            query.mu = mu;
            let scaled = mu_scaled_risk(&query).unwrap();
            prop_assert!(scaled >= opt.risk - 1e-12);
        }
    }
}
