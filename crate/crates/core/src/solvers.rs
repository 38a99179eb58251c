//! Conjugate gradient on the damped normal equations and the
//! Levenberg–Marquardt damping controller used by practical FR.

use serde::{Deserialize, Serialize};

use crate::diff::HvpOracle;
use crate::error::{Result, RidgeError};
use crate::problems::ZeroSumProblem;
use crate::vecspace::{self, JointPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Stop once `‖r‖ ≤ tol · ‖b‖`.
    pub tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { max_iters: 10, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iters: usize,
    /// Final relative residual `‖b - A x‖ / ‖b‖`.
    pub residual: f64,
}

/// Conjugate gradient from a zero initial guess.
///
/// Fails with [`RidgeError::CgDivergence`] on a non-finite iterate or a
/// non-positive curvature direction.
pub fn cg_solve(mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>, b: &[f64], cfg: &CgConfig) -> Result<CgOutcome> {
    if cfg.max_iters == 0 {
        return Err(RidgeError::Config("CG needs max_iters >= 1".into()));
    }
    let bnorm = vecspace::norm(b);
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return Ok(CgOutcome { solution: x, iters: 0, residual: 0.0 });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = vecspace::dot(&r, &r);
    let mut iters = 0;
    while iters < cfg.max_iters && rr.sqrt() > cfg.tol * bnorm {
        let ap = apply(&p)?;
        let curv = vecspace::dot(&p, &ap);
        if !(curv.is_finite() && curv > 0.0) {
            return Err(RidgeError::CgDivergence { iters });
        }
        let alpha = rr / curv;
        vecspace::axpy(alpha, &p, &mut x);
        vecspace::axpy(-alpha, &ap, &mut r);
        iters += 1;
        let rr_next = vecspace::dot(&r, &r);
        if !(rr_next.is_finite() && vecspace::all_finite(&x)) {
            return Err(RidgeError::CgDivergence { iters });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Ok(CgOutcome { solution: x, iters, residual: rr.sqrt() / bnorm })
}

/// The four-branch Levenberg–Marquardt rule on the reduction ratio.
pub fn adjust_damping(lambda: f64, rho: f64) -> f64 {
    if rho <= 0.0 {
        2.0 * lambda
    } else if rho <= 0.5 {
        1.1 * lambda
    } else if rho > 0.95 {
        0.9 * lambda
    } else {
        lambda
    }
}

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const LAMBDA_FLOOR: f64 = 1e-8;
pub const LAMBDA_CEILING: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingState {
    pub lambda: f64,
    pub last_rho: Option<f64>,
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for DampingState {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA)
    }
}

impl DampingState {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, last_rho: None, floor: LAMBDA_FLOOR, ceiling: LAMBDA_CEILING }
    }

    /// Damping pinned at `lambda` from below (use `0.0` for undamped solves).
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self.lambda = self.lambda.max(floor);
        self
    }

    /// Applies [`adjust_damping`] and the floor/ceiling clamp.
    pub fn update(&mut self, rho: f64) {
        let mut next = adjust_damping(self.lambda, rho);
        if next > self.ceiling {
            log::warn!("damping reached its ceiling {:e}", self.ceiling);
            next = self.ceiling;
        }
        self.lambda = next.max(self.floor);
        self.last_rho = Some(rho);
    }
}

/// Result of one damped correction solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub delta_y: Vec<f64>,
    /// Reduction ratio, `None` when `b = 0` short-circuited the solve.
    pub rho: Option<f64>,
    pub cg_iters: usize,
    /// Damping used for the solve.
    pub lambda_used: f64,
}

/// Solves `(H_yy² + λI) Δy = H_yy b` by CG with two Hessian-vector products
/// per operator application, then scores the step with the reduction ratio
/// and updates the damping.
///
/// `point` is the post-leader-step point; `b` comes from
/// [`crate::diff::cross_hessian_step`] at the pre-step point.
pub fn solve_correction(
    problem: &dyn ZeroSumProblem,
    point: &JointPoint,
    b: &[f64],
    state: &DampingState,
    cfg: &CgConfig,
    oracle: &HvpOracle,
) -> Result<(Correction, DampingState)> {
    let mut state = *state;
    let m = point.m();
    let bb = vecspace::dot(b, b);
    if bb == 0.0 {
        let c = Correction { delta_y: vec![0.0; m], rho: None, cg_iters: 0, lambda_used: state.lambda };
        return Ok((c, state));
    }
    let hyy = |v: &[f64]| oracle.hvp_yy(problem, point, v);
    let rhs = hyy(b)?;
    let solve = |lambda: f64| {
        cg_solve(
            |v| {
                let hv = hyy(v)?;
                let mut out = hyy(&hv)?;
                vecspace::axpy(lambda, v, &mut out);
                Ok(out)
            },
            &rhs,
            cfg,
        )
    };
    let mut lambda = state.lambda;
    let outcome = match solve(lambda) {
        Ok(o) => o,
        Err(RidgeError::CgDivergence { .. }) => {
            lambda = (10.0 * lambda.max(state.floor)).max(LAMBDA_FLOOR);
            log::warn!("CG diverged; retrying with damping {lambda:e}");
            state.lambda = lambda;
            solve(lambda)?
        }
        Err(e) => return Err(e),
    };
    let mut delta_y = outcome.solution;

    // ∇_y f(x_old, y) = ∇_y f(x_new, y) + b
    let g_old = vecspace::add(&problem.grad_y(point), b);
    let moved = JointPoint { x: point.x.clone(), y: vecspace::add(&point.y, &delta_y) };
    let actual = vecspace::sub(&g_old, &problem.grad_y(&moved));
    let model = vecspace::sub(&hyy(&delta_y)?, b);
    let num = bb - vecspace::dot(&actual, &actual);
    let den = bb - vecspace::dot(&model, &model);
    let rho = if den.abs() < 1e-14 * bb { 1.0 } else { num / den };
    if !rho.is_finite() {
        return Err(RidgeError::Overflow("reduction ratio is not finite".into()));
    }
    state.update(rho);
    if rho <= 0.0 {
        delta_y.iter_mut().for_each(|v| *v = 0.0);
    }
    let c = Correction { delta_y, rho: Some(rho), cg_iters: outcome.iters, lambda_used: lambda };
    Ok((c, state))
}
