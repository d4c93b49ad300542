//! Random feature/example subset draws for ensemble members.
//!
//! Each member of an ensemble sees a submatrix of the design: a feature
//! subset `S` of `[p]` and an example subset `T` of `[n]`. Every draw must
//! satisfy `|S| < |T| - 1`, which keeps the member's least-squares problem
//! overdetermined with at least one degree of freedom to spare.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default number of coin-flip redraws before giving up.
pub const DEFAULT_MAX_REJECTS: usize = 1000;

/// How subsets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// `|S| = floor(alpha p)`, `|T| = floor(eta n)`, uniformly at random.
    FixedSize,
    /// Each feature kept with probability `alpha`, each example with
    /// probability `eta`; both subsets are redrawn together until the draw
    /// satisfies `|S| < |T| - 1` or the budget runs out.
    CoinFlip { max_rejects: usize },
}

/// Subset-size proportions plus the draw strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleScheme {
    pub alpha: f64,
    pub eta: f64,
    pub strategy: Strategy,
}

impl SubsampleScheme {
    /// `alpha` is the feature proportion in `[0, 1]`, `eta` the example
    /// proportion in `(0, 1]`.
    pub fn new(alpha: f64, eta: f64, strategy: Strategy) -> Result<Self> {
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
        Ok(Self {
            alpha,
            eta,
            strategy,
        })
    }

    pub fn fixed(alpha: f64, eta: f64) -> Result<Self> {
        Self::new(alpha, eta, Strategy::FixedSize)
    }

    pub fn coin_flip(alpha: f64, eta: f64) -> Result<Self> {
        Self::new(
            alpha,
            eta,
            Strategy::CoinFlip {
                max_rejects: DEFAULT_MAX_REJECTS,
            },
        )
    }
}

/// One member's feature subset `S` and example subset `T`, each sorted
/// ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPair {
    pub features: Vec<usize>,
    pub examples: Vec<usize>,
}

/// Uniform size-`k` subset of `0..m` by partial Fisher-Yates, sorted.
pub(crate) fn sample_without_replacement(
    rng: &mut impl Rng,
    m: usize,
    k: usize,
) -> Vec<usize> {
    debug_assert!(k <= m);
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Uniform random permutation of `0..m` by full Fisher-Yates.
pub(crate) fn permutation(rng: &mut impl Rng, m: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..m.saturating_sub(1) {
        let j = rng.random_range(i..m);
        pool.swap(i, j);
    }
    pool
}

fn coin_flip_subset(rng: &mut impl Rng, m: usize, prob: f64) -> Vec<usize> {
    (0..m).filter(|_| rng.random_bool(prob)).collect()
}

/// Draws one subset pair for a `p`-feature, `n`-example problem.
///
/// Fixed-size draws fail immediately when the floor sizes can never satisfy
/// `|S| < |T| - 1`; coin-flip draws reject and retry, failing only after
/// `max_rejects` attempts.
pub fn draw_subsets(
    scheme: &SubsampleScheme,
    p: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SubsetPair> {
    if p == 0 || n < 3 {
        return Err(Error::InvalidParameter(format!(
            "need p >= 1 and n >= 3, got p = {p}, n = {n}"
        )));
    }
    match scheme.strategy {
        Strategy::FixedSize => {
            let s = (scheme.alpha * p as f64).floor() as usize;
            let t = (scheme.eta * n as f64).floor() as usize;
            if s + 1 >= t {
                return Err(Error::ConstraintInfeasible { s, t });
            }
            Ok(SubsetPair {
                features: sample_without_replacement(rng, p, s),
                examples: sample_without_replacement(rng, n, t),
            })
        }
        Strategy::CoinFlip { max_rejects } => {
            for _ in 0..max_rejects {
                let features = coin_flip_subset(rng, p, scheme.alpha);
                let examples = coin_flip_subset(rng, n, scheme.eta);
                if features.len() + 1 < examples.len() {
                    return Ok(SubsetPair { features, examples });
                }
            }
            Err(Error::RejectionBudgetExhausted { max_rejects })
        }
    }
}

/// Per-index inclusion frequencies over a batch of draws.
///
/// Returns `(feature_freq, example_freq)` of lengths `p` and `n`.
pub fn inclusion_stats(
    draws: &[SubsetPair],
    p: usize,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if draws.is_empty() {
        return Err(Error::EmptyInput("inclusion_stats needs at least one draw"));
    }
    let mut f = vec![0.0; p];
    let mut e = vec![0.0; n];
    for pair in draws {
        for &j in &pair.features {
            f[j] += 1.0;
        }
        for &i in &pair.examples {
            e[i] += 1.0;
        }
    }
    let m = draws.len() as f64;
    for v in f.iter_mut().chain(e.iter_mut()) {
        *v /= m;
    }
    Ok((f, e))
}
