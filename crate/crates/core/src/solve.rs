//! Dense solve kernels used by the estimators.
//!
//! Least-squares systems go through column-pivoted QR. When the pivoted R
//! diagonal reveals rank deficiency the solve falls back to an SVD
//! pseudoinverse, treating singular values below `RANK_CUTOFF` times the
//! largest one as zero; the fallback also yields the minimum-norm solution
//! among the least-squares minimizers.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_CUTOFF: f64 = 1e-10;

pub struct SolveOutcome {
    pub solution: DVector<f64>,
    /// True when the QR path detected rank deficiency and SVD took over.
    pub rank_deficient: bool,
}

/// Least-squares solution of `a x = b` for a matrix with at least as many
/// rows as columns. Zero-column systems return an empty solution.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SolveOutcome> {
    let (m, k) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "lstsq lhs has {m} rows, rhs has {}",
            b.len()
        )));
    }
    if k == 0 {
        return Ok(SolveOutcome {
            solution: DVector::zeros(0),
            rank_deficient: false,
        });
    }
    if m < k {
        return Err(Error::DimensionMismatch(format!(
            "lstsq expects a tall system, got {m} x {k}"
        )));
    }

    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let head = r[(0, 0)].abs();
    let full_rank = head > 0.0 && (0..k).all(|i| r[(i, i)].abs() > RANK_CUTOFF * head);
    if full_rank {
        // a * P = Q R, so solve R w = Q^T b and undo the column permutation.
        let mut w = DVector::zeros(k);
        let qtb = qr.q().transpose() * b;
        w.copy_from(&qtb.rows(0, k));
        if r.solve_upper_triangular_mut(&mut w) {
            qr.p().inv_permute_rows(&mut w);
            return Ok(SolveOutcome {
                solution: w,
                rank_deficient: false,
            });
        }
    }
    Ok(SolveOutcome {
        solution: svd_solve(a, b)?,
        rank_deficient: true,
    })
}

/// Minimum-norm interpolating solution of `a x = b` for a matrix with fewer
/// rows than columns (an underdetermined system).
pub fn min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SolveOutcome> {
    let (m, k) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "min_norm lhs has {m} rows, rhs has {}",
            b.len()
        )));
    }
    if m >= k {
        return Err(Error::DimensionMismatch(format!(
            "min_norm expects a wide system, got {m} x {k}"
        )));
    }
    if m == 0 {
        return Ok(SolveOutcome {
            solution: DVector::zeros(k),
            rank_deficient: false,
        });
    }

    // a^T * P = Q R gives a = P^rev R^T Q^T; forward-solve R^T w = P^T b,
    // then x = Q w lies in the row space of `a`, hence has minimum norm.
    let qr = a.transpose().col_piv_qr();
    let r = qr.r();
    let head = r[(0, 0)].abs();
    let full_rank = head > 0.0 && (0..m).all(|i| r[(i, i)].abs() > RANK_CUTOFF * head);
    if full_rank {
        let mut rhs = b.clone();
        qr.p().permute_rows(&mut rhs);
        if let Some(w) = r.transpose().solve_lower_triangular(&rhs) {
            return Ok(SolveOutcome {
                solution: qr.q() * w,
                rank_deficient: false,
            });
        }
    }
    Ok(SolveOutcome {
        solution: svd_solve(a, b)?,
        rank_deficient: true,
    })
}

/// Moore-Penrose pseudoinverse with the crate-wide singular-value cutoff.
///
/// The second return is true when the cutoff zeroed at least one singular
/// value, i.e. the matrix was numerically rank-deficient.
pub fn pinv(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let (m, k) = a.shape();
    if m == 0 || k == 0 {
        return Ok((DMatrix::zeros(k, m), false));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { RANK_CUTOFF * smax } else { f64::MAX };
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let deficient = rank < m.min(k);
    let p = svd
        .pseudo_inverse(eps)
        .map_err(|_| Error::SingularSystem("svd pseudoinverse"))?;
    Ok((p, deficient))
}

/// Minimum-norm least-squares solve through the SVD.
pub fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { RANK_CUTOFF * smax } else { f64::MAX };
    svd.solve(b, eps)
        .map(|m| DVector::from_column_slice(m.as_slice()))
        .map_err(|_| Error::SingularSystem("svd least squares"))
}

/// Solves a symmetric positive-definite system via Cholesky.
///
/// Callers pass Gram matrices plus nonnegative diagonal loadings, which are
/// positive definite exactly when the system is well posed, so a Cholesky
/// breakdown is reported as a singular system rather than papered over.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.cholesky()
        .map(|chol| chol.solve(b))
        .ok_or(Error::SingularSystem("symmetric solve"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, normal_matrix, normal_vector, substream};
    use approx::assert_relative_eq;

    #[test]
    fn lstsq_matches_normal_equations() {
        let mut rng = substream(11, Domain::Instance, 0);
        let a = normal_matrix(&mut rng, 30, 8);
        let b = normal_vector(&mut rng, 30);
        let out = lstsq(&a, &b).unwrap();
        assert!(!out.rank_deficient);
        let gram = a.transpose() * &a;
        let direct = gram.lu().solve(&(a.transpose() * &b)).unwrap();
        assert_relative_eq!(out.solution, direct, epsilon = 1e-10);
    }

    #[test]
    fn lstsq_rank_deficient_falls_back_to_min_norm() {
        let mut rng = substream(12, Domain::Instance, 0);
        let base = normal_matrix(&mut rng, 20, 3);
        // duplicate a column: rank 3 in a 20 x 4 system
        let mut a = DMatrix::zeros(20, 4);
        a.columns_mut(0, 3).copy_from(&base);
        a.set_column(3, &base.column(1).into_owned());
        let b = normal_vector(&mut rng, 20);
        let out = lstsq(&a, &b).unwrap();
        assert!(out.rank_deficient);
        // residual must still be a least-squares residual: a^T (b - a x) = 0
        let resid = a.transpose() * (&b - &a * &out.solution);
        assert!(resid.amax() < 1e-8);
        // and among solutions, x + t*(null vector) is never shorter
        let null = DVector::from_vec(vec![0.0, 1.0, 0.0, -1.0]) / 2.0_f64.sqrt();
        assert!((&out.solution + &null * 0.1).norm() >= out.solution.norm() - 1e-12);
    }

    #[test]
    fn min_norm_interpolates_and_is_shortest() {
        let mut rng = substream(13, Domain::Instance, 0);
        let a = normal_matrix(&mut rng, 6, 15);
        let b = normal_vector(&mut rng, 6);
        let out = min_norm(&a, &b).unwrap();
        assert!((&a * &out.solution - &b).amax() < 1e-10);
        // perturbing along the null space only grows the norm
        let v = normal_vector(&mut rng, 15);
        let gram = (&a * a.transpose()).lu();
        let proj = a.transpose() * gram.solve(&(&a * &v)).unwrap();
        let null_dir = &v - proj;
        let perturbed = &out.solution + &null_dir;
        assert!(perturbed.norm() > out.solution.norm());
        // row-space component means <x, null_dir> = 0
        assert!(out.solution.dot(&null_dir).abs() < 1e-8);
    }

    #[test]
    fn pinv_satisfies_the_penrose_conditions() {
        let mut rng = substream(15, Domain::Instance, 0);
        for (m, k) in [(10, 4), (4, 10)] {
            let a = normal_matrix(&mut rng, m, k);
            let (p, deficient) = pinv(&a).unwrap();
            assert!(!deficient);
            assert_relative_eq!(&a * &p * &a, a, epsilon = 1e-9);
            assert_relative_eq!(&p * &a * &p, p, epsilon = 1e-9);
            let ap = &a * &p;
            assert_relative_eq!(ap.transpose(), ap, epsilon = 1e-9);
        }
        // rank-1 matrix is flagged
        let col = normal_vector(&mut rng, 6);
        let rank1 = &col * col.transpose();
        let (p1, deficient1) = pinv(&rank1).unwrap();
        assert!(deficient1);
        assert_relative_eq!(&rank1 * &p1 * &rank1, rank1, epsilon = 1e-9);
    }

    #[test]
    fn spd_solve_round_trips() {
        let mut rng = substream(14, Domain::Instance, 0);
        let m = normal_matrix(&mut rng, 12, 12);
        let spd = &m * m.transpose() + DMatrix::identity(12, 12);
        let x = normal_vector(&mut rng, 12);
        let b = &spd * &x;
        let got = solve_spd(spd, &b).unwrap();
        assert_relative_eq!(got, x, epsilon = 1e-8);
    }
}
