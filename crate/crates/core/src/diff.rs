//! Hessian-vector products, finite-difference Hessians and numerical
//! Jacobians of update maps.

use crate::error::{Result, RidgeError};
use crate::optimizers::UpdateRule;
use crate::problems::{HessianBlocks, Problem, ZeroSumProblem};
use crate::vecspace::{self, DenseMatrix, JointPoint, ANALYSIS_DIM_LIMIT};

/// Step for second-difference quantities: `eps^(1/3)`, scaled per coordinate.
pub const SECOND_ORDER_STEP: f64 = 6.055454452393343e-6;

/// Relative step for Jacobians of update maps.
pub const JACOBIAN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HvpMode {
    Analytic,
    FiniteDifference,
}

/// Hessian-vector products of a zero-sum objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvpOracle {
    pub mode: HvpMode,
    /// Base step; `None` means `sqrt(eps) * (1 + ‖z‖)`.
    pub fd_step: Option<f64>,
}

impl HvpOracle {
    pub fn analytic() -> Self {
        Self { mode: HvpMode::Analytic, fd_step: None }
    }

    pub fn finite_difference() -> Self {
        Self { mode: HvpMode::FiniteDifference, fd_step: None }
    }

    /// Analytic when the problem provides Hessian blocks at `z`.
    pub fn preferred(problem: &dyn ZeroSumProblem, z: &JointPoint) -> Self {
        if problem.hessian_blocks(z).is_some() {
            Self::analytic()
        } else {
            Self::finite_difference()
        }
    }

    fn blocks(&self, problem: &dyn ZeroSumProblem, z: &JointPoint) -> Result<HessianBlocks> {
        problem
            .hessian_blocks(z)
            .ok_or_else(|| RidgeError::Contract(format!("{} has no analytic Hessian blocks", problem.id())))
    }

    fn eps(&self, z: &JointPoint, v: &[f64]) -> f64 {
        let base = self.fd_step.unwrap_or_else(|| f64::EPSILON.sqrt() * (1.0 + z.norm()));
        let vn = vecspace::norm(v);
        if vn > 0.0 {
            base / vn
        } else {
            base
        }
    }

    /// `H_yy v`.
    pub fn hvp_yy(&self, problem: &dyn ZeroSumProblem, z: &JointPoint, v: &[f64]) -> Result<Vec<f64>> {
        let out = match self.mode {
            HvpMode::Analytic => self.blocks(problem, z)?.yy.matvec(v),
            HvpMode::FiniteDifference => {
                let e = self.eps(z, v);
                let plus = JointPoint { x: z.x.clone(), y: step(&z.y, e, v) };
                let minus = JointPoint { x: z.x.clone(), y: step(&z.y, -e, v) };
                central(&problem.grad_y(&plus), &problem.grad_y(&minus), e)
            }
        };
        finite(out, "H_yy v")
    }

    /// `H_yx u` for a leader-space direction `u`.
    pub fn hvp_yx(&self, problem: &dyn ZeroSumProblem, z: &JointPoint, u: &[f64]) -> Result<Vec<f64>> {
        let out = match self.mode {
            HvpMode::Analytic => self.blocks(problem, z)?.yx.matvec(u),
            HvpMode::FiniteDifference => {
                let e = self.eps(z, u);
                let plus = JointPoint { x: step(&z.x, e, u), y: z.y.clone() };
                let minus = JointPoint { x: step(&z.x, -e, u), y: z.y.clone() };
                central(&problem.grad_y(&plus), &problem.grad_y(&minus), e)
            }
        };
        finite(out, "H_yx u")
    }

    /// `H_xy v` for a follower-space direction `v`.
    pub fn hvp_xy(&self, problem: &dyn ZeroSumProblem, z: &JointPoint, v: &[f64]) -> Result<Vec<f64>> {
        let out = match self.mode {
            HvpMode::Analytic => self.blocks(problem, z)?.xy.matvec(v),
            HvpMode::FiniteDifference => {
                let e = self.eps(z, v);
                let plus = JointPoint { x: z.x.clone(), y: step(&z.y, e, v) };
                let minus = JointPoint { x: z.x.clone(), y: step(&z.y, -e, v) };
                central(&problem.grad(&plus).x, &problem.grad(&minus).x, e)
            }
        };
        finite(out, "H_xy v")
    }

    /// Full Hessian action `∇²f · v`.
    pub fn hvp(&self, problem: &dyn ZeroSumProblem, z: &JointPoint, v: &JointPoint) -> Result<JointPoint> {
        let out = match self.mode {
            HvpMode::Analytic => self.blocks(problem, z)?.apply(v),
            HvpMode::FiniteDifference => {
                let flat = v.concat();
                let e = self.eps(z, &flat);
                let gp = problem.grad(&z.offset(e, v)).concat();
                let gm = problem.grad(&z.offset(-e, v)).concat();
                JointPoint::from_concat(&central(&gp, &gm, e), z.n())?
            }
        };
        if !out.is_finite() {
            return Err(RidgeError::Overflow("Hessian-vector product is not finite".into()));
        }
        Ok(out)
    }
}

fn step(base: &[f64], e: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + e * d).collect()
}

fn central(plus: &[f64], minus: &[f64], e: f64) -> Vec<f64> {
    plus.iter().zip(minus).map(|(p, m)| (p - m) / (2.0 * e)).collect()
}

fn finite(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if vecspace::all_finite(&v) {
        Ok(v)
    } else {
        Err(RidgeError::Overflow(format!("{what} is not finite")))
    }
}

/// `b = ∇_y f(x, y) - ∇_y f(x + dx, y)` where `dx` is the signed leader step
/// (`dx = -η_x ∇_x f` for plain FR). For a quadratic, `b = -H_yx dx`, i.e.
/// `b = η_x H_yx ∇_x f`.
pub fn cross_hessian_step(problem: &dyn ZeroSumProblem, z: &JointPoint, dx: &[f64]) -> Vec<f64> {
    if dx.iter().all(|v| *v == 0.0) {
        return vec![0.0; z.m()];
    }
    let moved = JointPoint { x: vecspace::add(&z.x, dx), y: z.y.clone() };
    vecspace::sub(&problem.grad_y(z), &problem.grad_y(&moved))
}

/// Full Hessian by central differences of the gradient, symmetrised.
pub fn hessian_fd(problem: &dyn ZeroSumProblem, z: &JointPoint) -> DenseMatrix {
    let n = z.n();
    let flat = z.concat();
    let dim = flat.len();
    let mut cols = Vec::with_capacity(dim);
    for j in 0..dim {
        let h = SECOND_ORDER_STEP * flat[j].abs().max(1.0);
        let mut plus = flat.clone();
        plus[j] += h;
        let mut minus = flat.clone();
        minus[j] -= h;
        let gp = problem.grad(&JointPoint::from_concat(&plus, n).expect("same shape")).concat();
        let gm = problem.grad(&JointPoint::from_concat(&minus, n).expect("same shape")).concat();
        cols.push(central(&gp, &gm, h));
    }
    DenseMatrix::from_columns(dim, &cols).symmetrized()
}

/// Problem-provided blocks, falling back to [`hessian_fd`].
pub fn hessian_blocks_or_fd(problem: &dyn ZeroSumProblem, z: &JointPoint) -> HessianBlocks {
    problem.hessian_blocks(z).unwrap_or_else(|| HessianBlocks::from_full(&hessian_fd(problem, z), z.n()))
}

/// Central-difference Jacobian of one step of `rule` at `z`, with the rule's
/// state zeroed. Two-step rules (momentum, optimistic) are differentiated as
/// maps on the augmented state `(z_t, z_{t-1})`, giving a `2(n+m)` square
/// matrix.
pub fn dynamics_jacobian(rule: &UpdateRule, problem: &Problem, z: &JointPoint) -> Result<DenseMatrix> {
    let dim = z.dim();
    let augmented = rule.is_two_step()?;
    let total = if augmented { 2 * dim } else { dim };
    if total > ANALYSIS_DIM_LIMIT {
        return Err(RidgeError::Size { dim: total, limit: ANALYSIS_DIM_LIMIT });
    }
    let n = z.n();
    let base: Vec<f64> = if augmented { [z.concat(), z.concat()].concat() } else { z.concat() };
    let eval = |s: &[f64]| -> Result<Vec<f64>> {
        let cur = JointPoint::from_concat(&s[..dim], n)?;
        if augmented {
            let prev = JointPoint::from_concat(&s[dim..], n)?;
            let next = rule.transition(problem, &cur, Some(&prev))?;
            Ok([next.concat(), cur.concat()].concat())
        } else {
            Ok(rule.transition(problem, &cur, None)?.concat())
        }
    };
    let mut cols = Vec::with_capacity(total);
    for j in 0..total {
        let h = JACOBIAN_STEP * (1.0 + base[j].abs());
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        cols.push(central(&eval(&plus)?, &eval(&minus)?, h));
    }
    let jac = DenseMatrix::from_columns(total, &cols);
    if !jac.is_finite() {
        return Err(RidgeError::Overflow("dynamics Jacobian is not finite".into()));
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_g1, make_g3, make_random_quadratic, make_sec3_quadratic, QuadraticSpec};

    #[test]
    fn second_order_step_is_cube_root_of_eps() {
        assert!((SECOND_ORDER_STEP - f64::EPSILON.cbrt()).abs() < 1e-18);
    }

    #[test]
    fn g1_hvp_yy() {
        let g1 = make_g1();
        let z = JointPoint::new(vec![0.3], vec![-1.2]);
        for oracle in [HvpOracle::analytic(), HvpOracle::finite_difference()] {
            let out = oracle.hvp_yy(&g1, &z, &[1.0]).unwrap();
            assert!((out[0] + 2.0).abs() < 1e-7);
            assert_eq!(oracle.hvp_yy(&g1, &z, &[0.0]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn analytic_mode_needs_blocks() {
        let r = HvpOracle::analytic().hvp_yy(&make_g3(), &JointPoint::zeros(1, 1), &[1.0]);
        assert!(matches!(r, Err(RidgeError::Contract(_))));
    }

    #[test]
    fn cross_step_examples() {
        let g1 = make_g1();
        let z = JointPoint::new(vec![1.0], vec![1.0]);
        assert_eq!(cross_hessian_step(&g1, &z, &[0.0]), vec![0.0]);
        let gx = g1.grad(&z).x[0];
        assert_eq!(gx, -2.0);
        let b = cross_hessian_step(&g1, &z, &[-0.1 * gx]);
        assert!((b[0] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn fd_hessian_matches_quadratic() {
        let p = make_random_quadratic(3, 2, 4, &QuadraticSpec::mixed()).unwrap();
        let z = p.default_start();
        let fd = hessian_fd(&p, &z);
        assert!(fd.sub(p.hessian()).max_abs() < 1e-6);
    }

    #[test]
    fn gda_jacobian_on_sec3() {
        let p = Problem::zero_sum(make_sec3_quadratic());
        let rule = UpdateRule::from_id("gda", crate::optimizers::Hyper::uniform(0.1)).unwrap();
        let jac = dynamics_jacobian(&rule, &p, &JointPoint::zeros(1, 1)).unwrap();
        let expected = DenseMatrix::from_rows(&[&[0.4, -0.4], &[0.4, 1.2]]);
        assert!(jac.sub(&expected).max_abs() < 1e-9);
    }
}
