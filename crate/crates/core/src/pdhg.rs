//! Condat–Vũ primal-dual iterations for
//! `min_x 1/2 ||A x - z||^2 + ||L x||_1`.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm2, sub};
use crate::operators::{operator_norm, LinearMap};
use crate::prox::{clip_unit_in_place, ProxSpec};

/// Default relative-change tolerance on the primal iterate.
pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub tau: f64,
    pub sigma: f64,
}

impl StepSizes {
    pub fn new(tau: f64, sigma: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step sizes must be finite and positive (tau={tau}, sigma={sigma})"
            )));
        }
        Ok(Self { tau, sigma })
    }

    /// Largest `sigma` for which the convergence condition holds with
    /// equality: `(1/tau - ||A||^2/2) / ||L||^2`.
    pub fn saturating_sigma(tau: f64, norm_a: f64, norm_l: f64) -> f64 {
        (1.0 / tau - norm_a * norm_a / 2.0) / (norm_l * norm_l)
    }
}

/// `1/tau - sigma ||L||^2 - ||A||^2 / 2`; positive iff the condition holds strictly.
pub fn check_stepsizes(tau: f64, sigma: f64, norm_a: f64, norm_l: f64) -> f64 {
    1.0 / tau - sigma * norm_l * norm_l - norm_a * norm_a / 2.0
}

/// Squared hinge of the violation of the convergence condition.
pub fn constraint_distance(tau: f64, sigma: f64, norm_a: f64, norm_l: f64) -> f64 {
    let violation = norm_a * norm_a / 2.0 - 1.0 / tau + sigma * norm_l * norm_l;
    let h = violation.max(0.0);
    h * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub stop: StopCriteria,
    /// Run even when the step sizes violate the convergence condition.
    pub allow_unsafe_steps: bool,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub iterations: usize,
    /// `||x_{k+1} - x_k|| / max(1, ||x_k||)` at the last iteration.
    pub final_residual: f64,
    /// Objective after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Primal-dual pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PdState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PdState {
    /// `(A* z, 0)`.
    pub fn initial<A: LinearMap + ?Sized, L: LinearMap + ?Sized>(a: &A, l: &L, z: &[f64]) -> Self {
        let mut x = vec![0.0; a.in_dim()];
        a.apply_adjoint_into(z, &mut x);
        Self {
            x,
            y: vec![0.0; l.out_dim()],
        }
    }
}

/// `1/2 ||A x - z||^2 + g(L x)`.
pub fn objective<A: LinearMap + ?Sized, L: LinearMap + ?Sized>(
    a: &A,
    l: &L,
    z: &[f64],
    x: &[f64],
) -> f64 {
    let mut ax = vec![0.0; a.out_dim()];
    a.apply_into(x, &mut ax);
    let data: f64 = ax.iter().zip(z).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / 2.0;
    let mut lx = vec![0.0; l.out_dim()];
    l.apply_into(x, &mut lx);
    data + ProxSpec::L1.value(&lx)
}

/// One iteration:
/// `x+ = x - tau A*(A x - z) - tau L* y`,
/// `y+ = prox_{sigma g*}(y + sigma L (2 x+ - x))`.
pub fn pdhg_step<A: LinearMap + ?Sized, L: LinearMap + ?Sized>(
    a: &A,
    l: &L,
    z: &[f64],
    steps: StepSizes,
    state: &PdState,
) -> PdState {
    let StepSizes { tau, sigma } = steps;
    let n = a.in_dim();
    let mut r = vec![0.0; a.out_dim()];
    a.apply_into(&state.x, &mut r);
    r.iter_mut().zip(z).for_each(|(ri, zi)| *ri -= zi);
    let mut grad = vec![0.0; n];
    a.apply_adjoint_into(&r, &mut grad);
    let mut lty = vec![0.0; n];
    l.apply_adjoint_into(&state.y, &mut lty);
    let x_next: Vec<f64> = (0..n)
        .map(|i| state.x[i] - tau * grad[i] - tau * lty[i])
        .collect();

    let extrapolated: Vec<f64> = x_next
        .iter()
        .zip(&state.x)
        .map(|(xn, x)| 2.0 * xn - x)
        .collect();
    let mut y_next = vec![0.0; l.out_dim()];
    l.apply_into(&extrapolated, &mut y_next);
    y_next
        .iter_mut()
        .zip(&state.y)
        .for_each(|(yn, y)| *yn = y + sigma * *yn);
    clip_unit_in_place(&mut y_next);
    PdState {
        x: x_next,
        y: y_next,
    }
}

/// Runs the primal-dual iteration from `(A* z, 0)` until the relative primal
/// change drops below `stop.tol` (tested from the second iteration on) or
/// `stop.max_iter` is reached. Hitting the
/// iteration cap is reported through `converged = false`.
pub fn pdhg_solve<A: LinearMap + ?Sized, L: LinearMap + ?Sized>(
    a: &A,
    l: &L,
    z: &[f64],
    steps: StepSizes,
    options: SolveOptions,
) -> Result<SolveReport> {
    check_dim("pdhg measurement", a.out_dim(), z.len())?;
    check_dim("pdhg analysis input", a.in_dim(), l.in_dim())?;
    if !(options.stop.tol > 0.0) || options.stop.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "stopping tolerance and iteration cap must be positive".into(),
        ));
    }
    if !options.allow_unsafe_steps {
        let norm_a = operator_norm(a, 1e-9, 100_000)?;
        let norm_l = operator_norm(l, 1e-9, 100_000)?;
        let margin = check_stepsizes(steps.tau, steps.sigma, norm_a, norm_l);
        if margin <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step sizes violate 1/tau - sigma ||L||^2 > ||A||^2/2 (margin {margin:e})"
            )));
        }
    }

    let mut state = PdState::initial(a, l, z);
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.stop.max_iter {
        let next = pdhg_step(a, l, z, steps, &state);
        iterations += 1;
        residual = norm2(&sub(&next.x, &state.x)) / norm2(&state.x).max(1.0);
        trace.push(objective(a, l, z, &next.x));
        state = next;
        // From (A* z, 0) the first primal step can vanish while the dual
        // variable is still moving.
        if iterations > 1 && residual < options.stop.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        x_hat: state.x,
        y_hat: state.y,
        iterations,
        final_residual: residual,
        objective_trace: trace,
        converged,
    })
}
