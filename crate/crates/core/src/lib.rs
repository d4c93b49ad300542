//! Ensembles of ordinary least squares fit on random submatrices.
//!
//! The crate covers the full pipeline for studying such ensembles under an
//! isotropic Gaussian design:
//!
//! * [`sampling`] draws the random feature/example subsets each member sees,
//! * [`datagen`] builds synthetic regression instances `y = X beta + sigma z`,
//! * [`estimators`] fits individual members, whole ensembles, and the related
//!   ridge / dropout / minimum-norm estimators,
//! * [`risk`] evaluates the closed-form prediction-risk theory (exact
//!   finite-sample pairwise terms and their proportional limits),
//! * [`montecarlo`] estimates the same quantities by simulation and checks
//!   the underlying matrix identities,
//! * [`experiments`] reproduces the reference figure pipelines and the
//!   validation suite as plot-ready CSV files.
//!
//! All randomness flows through counter-addressed ChaCha streams ([`rng`]),
//! so every result is reproducible from a single seed regardless of thread
//! scheduling.

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod montecarlo;
pub mod numfmt;
pub mod risk;
pub mod rng;
pub mod sampling;
mod solve;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
