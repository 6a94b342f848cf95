//! Spectral norm by power iteration on `Op* Op`.

use super::LinearMap;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm2};
use crate::rng::SeededRng;

/// Tolerance used for norms cached at construction and during training.
pub const NORM_TOL: f64 = 1e-12;

const START_SEED: u64 = 0x5eed_0f_4e0a;

#[derive(Debug, Clone)]
pub struct NormEstimate {
    pub norm: f64,
    /// Unit-norm approximation of the top right singular vector; a good warm
    /// start after small updates of the operator.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// `||op||_2` with relative accuracy `tol`, from a fixed seeded start vector.
pub fn operator_norm<M: LinearMap + ?Sized>(op: &M, tol: f64, max_iter: usize) -> Result<f64> {
    let mut rng = SeededRng::new(START_SEED);
    let start: Vec<f64> = (0..op.in_dim()).map(|_| rng.standard_normal()).collect();
    operator_norm_from(op, &start, tol, max_iter).map(|e| e.norm)
}

/// Power iteration from a caller-supplied start vector.
///
/// The eigenvalue estimate is the Rayleigh quotient `<v, Op*Op v>`. Its
/// error is extrapolated from the ratio of successive increments, so the
/// stopping test tracks the distance to the limit rather than the step size.
pub fn operator_norm_from<M: LinearMap + ?Sized>(
    op: &M,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<NormEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    check_dim("operator_norm start vector", op.in_dim(), start.len())?;
    let n = op.in_dim();
    let mut v = start.to_vec();
    let s = norm2(&v);
    if s == 0.0 || !s.is_finite() {
        return Err(Error::InvalidArgument("start vector must be nonzero and finite".into()));
    }
    v.iter_mut().for_each(|x| *x /= s);

    let mut scratch = vec![0.0; op.out_dim()];
    let mut w = vec![0.0; n];
    let mut lambda_prev = f64::NAN;
    let mut delta_prev = f64::NAN;
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        op.gram_into(&v, &mut scratch, &mut w);
        lambda = dot(&v, &w);
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(NormEstimate {
                norm: 0.0,
                vector: v,
                iterations: it,
            });
        }
        let delta = (lambda - lambda_prev).abs();
        if delta.is_finite() {
            let converged = if delta == 0.0 {
                true
            } else if delta_prev.is_finite() && delta_prev > 0.0 {
                let rho = (delta / delta_prev).min(0.999);
                delta * rho / (1.0 - rho) <= tol * lambda && delta <= tol * lambda
            } else {
                false
            };
            if converged {
                return Ok(NormEstimate {
                    norm: lambda.max(0.0).sqrt(),
                    vector: v,
                    iterations: it,
                });
            }
        }
        lambda_prev = lambda;
        delta_prev = delta;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    Err(Error::NormNotConverged {
        iterations: max_iter,
        estimate: lambda.max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{AnalysisOperator, DegradationOperator, Grid};

    #[test]
    fn identity_norm_is_one() {
        let id = DegradationOperator::identity(4).unwrap();
        assert!((operator_norm(&id, 1e-9, 100).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_norm() {
        let d = AnalysisOperator::dense(Grid::for_len(2), 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let tol = 1e-9;
        assert!((operator_norm(&d, tol, 10_000).unwrap() - 3.0).abs() <= 3.0 * tol);
    }

    #[test]
    fn zero_operator_has_zero_norm() {
        let z = AnalysisOperator::random_dense(3, 4, 0, 0.0).unwrap();
        assert_eq!(operator_norm(&z, 1e-9, 10).unwrap(), 0.0);
    }

    #[test]
    fn reports_last_estimate_on_failure() {
        let l = AnalysisOperator::random_dense(30, 30, 1, 1.0).unwrap();
        match operator_norm(&l, 1e-15, 2) {
            Err(Error::NormNotConverged { iterations, estimate }) => {
                assert_eq!(iterations, 2);
                assert!(estimate > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let id = DegradationOperator::identity(2).unwrap();
        assert!(operator_norm(&id, 0.0, 10).is_err());
    }

    #[test]
    fn blur_cached_norm_matches_power_iteration() {
        let a = DegradationOperator::uniform_blur(3, 28).unwrap();
        let est = operator_norm(&a, 1e-12, 100_000).unwrap();
        assert!((est - a.norm()).abs() < 1e-9, "{est} vs {}", a.norm());
    }
}
