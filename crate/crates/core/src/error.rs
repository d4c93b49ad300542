//! Error type shared by every module in the crate.

use thiserror::Error;

/// Everything that can go wrong when drawing subsets, fitting estimators,
/// evaluating the closed-form theory, or running an experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Requested subset sizes can never satisfy `|S| < |T| - 1`.
    #[error("infeasible subset sizes: |S| = {s} is not below |T| - 1 with |T| = {t}")]
    ConstraintInfeasible { s: usize, t: usize },

    /// Coin-flip sampling kept violating `|S| < |T| - 1` until the budget ran out.
    #[error("coin-flip sampling rejected {max_rejects} draws without satisfying |S| < |T| - 1")]
    RejectionBudgetExhausted { max_rejects: usize },

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An aggregate operation received nothing to aggregate.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Matrix/vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A closed-form expression was queried outside its domain of validity.
    #[error("theory query outside its domain: {0}")]
    OutsideDomain(String),

    /// Denominator of a closed form is (numerically) zero.
    #[error("degenerate denominator in {0}")]
    DegenerateDenominator(&'static str),

    /// The feasible interval for a search is empty.
    #[error("infeasible search interval: {0}")]
    InfeasibleInterval(String),

    /// A linear system that is square by construction could not be solved.
    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),

    /// Materializing a dense map would exceed the configured entry budget.
    #[error("dense map of {rows} x {cols} entries exceeds the budget of {budget}")]
    BudgetExceeded {
        rows: usize,
        cols: usize,
        budget: usize,
    },

    /// Experiment configuration failed validation.
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
