//! Synthetic linear-model instances: `y = X beta + sigma z`.
//!
//! Entries of `X` and `z` are iid standard normal. The signal is drawn either
//! uniformly on the unit sphere or with iid `N(0, 1/p)` coordinates; both give
//! `E ||beta||^2 = 1`, which is the normalization the closed-form risk
//! expressions assume.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::{Error, Result};

/// How the signal vector is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaMode {
    /// Uniform on the unit sphere, so `||beta|| = 1` exactly.
    UnitSphere,
    /// iid `N(0, 1/p)` coordinates, so `||beta||^2` concentrates around 1.
    GaussianPrior,
}

/// Dimensions, noise level, signal prior, and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub beta_mode: BetaMode,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 || self.p == 0 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 3 and p >= 1, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// A realized instance. `y = x * beta + sigma * z` with the noise not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Draws an instance from an explicit generator.
///
/// Draw order is fixed: `X` row by row, then `beta`, then the noise. Callers
/// that need many instances under one seed should derive one substream per
/// instance rather than reusing a generator across draws.
pub fn generate_with(spec: &ProblemSpec, rng: &mut impl Rng) -> Result<ProblemInstance> {
    spec.validate()?;
    let x = rng::normal_matrix(rng, spec.n, spec.p);
    let beta = draw_beta(spec.p, spec.beta_mode, rng);
    let z = rng::normal_vector(rng, spec.n);
    let y = &x * &beta + spec.sigma * z;
    Ok(ProblemInstance { x, y, beta })
}

/// Draws the instance addressed by `(spec.seed, index)`.
pub fn generate_problem(spec: &ProblemSpec, index: u64) -> Result<ProblemInstance> {
    generate_with(spec, &mut rng::substream(spec.seed, Domain::Instance, index))
}

pub(crate) fn draw_beta(p: usize, mode: BetaMode, rng: &mut impl Rng) -> DVector<f64> {
    let g = rng::normal_vector(rng, p);
    match mode {
        BetaMode::UnitSphere => {
            let norm = g.norm();
            // a fresh normal vector is nonzero for all practical purposes
            g / norm
        }
        BetaMode::GaussianPrior => g / (p as f64).sqrt(),
    }
}

/// Dumps an instance as two CSV files: the design matrix with `x0..x{p-1}`
/// columns, and a long-format file holding `y` and `beta`.
///
/// Values use Rust's shortest round-trip float formatting so the dump can be
/// read back exactly.
pub fn write_instance_csv(
    inst: &ProblemInstance,
    x_path: &Path,
    yb_path: &Path,
) -> Result<()> {
    let mut xf = BufWriter::new(File::create(x_path)?);
    let p = inst.x.ncols();
    let header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    writeln!(xf, "{}", header.join(","))?;
    for i in 0..inst.x.nrows() {
        let row: Vec<String> = (0..p).map(|j| inst.x[(i, j)].to_string()).collect();
        writeln!(xf, "{}", row.join(","))?;
    }
    xf.flush()?;

    let mut yf = BufWriter::new(File::create(yb_path)?);
    writeln!(yf, "kind,index,value")?;
    for (i, v) in inst.y.iter().enumerate() {
        writeln!(yf, "y,{i},{v}")?;
    }
    for (j, v) in inst.beta.iter().enumerate() {
        writeln!(yf, "beta,{j},{v}")?;
    }
    yf.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p: usize, sigma: f64, beta_mode: BetaMode, seed: u64) -> ProblemSpec {
        ProblemSpec {
            n,
            p,
            sigma,
            beta_mode,
            seed,
        }
    }

    #[test]
    fn unit_sphere_signal_has_unit_norm() {
        for seed in 0..20 {
            let inst =
                generate_problem(&spec(10, 7, 1.0, BetaMode::UnitSphere, seed), 0).unwrap();
            assert!((inst.beta.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_prior_signal_concentrates_near_unit_norm() {
        // ||beta||^2 ~ chi^2_p / p, sd = sqrt(2/p) = 0.02 at p = 5000
        let inst =
            generate_problem(&spec(3, 5000, 1.0, BetaMode::GaussianPrior, 11), 0).unwrap();
        assert!((inst.beta.norm_squared() - 1.0).abs() < 5.0 * 0.02);
    }

    #[test]
    fn noiseless_response_is_exactly_x_beta() {
        let inst = generate_problem(&spec(30, 10, 0.0, BetaMode::UnitSphere, 5), 0).unwrap();
        assert!((&inst.x * &inst.beta - &inst.y).norm() < 1e-14);
    }

    #[test]
    fn design_columns_look_standard_normal() {
        let n = 40_000;
        let inst = generate_problem(&spec(n, 3, 1.0, BetaMode::UnitSphere, 2), 0).unwrap();
        let tol_mean = 4.0 / (n as f64).sqrt();
        for j in 0..3 {
            let col = inst.x.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < tol_mean, "col {j} mean {mean}");
            // var of the sample variance is about 2/n
            assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "col {j} var {var}");
        }
    }

    #[test]
    fn same_address_reproduces_the_instance() {
        let s = spec(12, 6, 0.7, BetaMode::GaussianPrior, 99);
        let a = generate_problem(&s, 3).unwrap();
        let b = generate_problem(&s, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_problem(&s, 4).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_problem(&spec(2, 5, 1.0, BetaMode::UnitSphere, 0), 0).is_err());
        assert!(generate_problem(&spec(10, 0, 1.0, BetaMode::UnitSphere, 0), 0).is_err());
        assert!(generate_problem(&spec(10, 5, -1.0, BetaMode::UnitSphere, 0), 0).is_err());
        assert!(generate_problem(&spec(10, 5, f64::NAN, BetaMode::UnitSphere, 0), 0).is_err());
    }

    #[test]
    fn csv_dump_round_trips_y() {
        let dir = std::env::temp_dir().join("ensemble-ols-datagen-test");
        std::fs::create_dir_all(&dir).unwrap();
        let inst = generate_problem(&spec(8, 4, 1.0, BetaMode::UnitSphere, 1), 0).unwrap();
        let xp = dir.join("x.csv");
        let yp = dir.join("yb.csv");
        write_instance_csv(&inst, &xp, &yp).unwrap();
        let body = std::fs::read_to_string(&yp).unwrap();
        let mut y_back = Vec::new();
        for line in body.lines().skip(1) {
            let mut it = line.split(',');
            if it.next() == Some("y") {
                let _ = it.next();
                y_back.push(it.next().unwrap().parse::<f64>().unwrap());
            }
        }
        assert_eq!(y_back.len(), 8);
        for (a, b) in y_back.iter().zip(inst.y.iter()) {
            assert_eq!(a, b);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
