//! Two-player objectives.
//!
//! Zero-sum problems expose a single cost `f(x, y)` that the leader `x`
//! minimises and the follower `y` maximises. General-sum problems expose a
//! leader cost `f` and a follower cost `g`, both minimised by their owner.

use std::fmt;
use std::sync::Arc;

use crate::diff;
use crate::error::{Result, RidgeError};
use crate::vecspace::{DenseMatrix, JointPoint};

mod quadratic;
mod stackelberg;
mod toy;

pub use quadratic::{
    make_g1, make_g2, make_momentum_quadratic, make_random_quadratic, make_sec3_quadratic, EigenSpec, QuadraticProblem,
    QuadraticSpec,
};
pub use stackelberg::{
    make_stackelberg_quadratic, make_stackelberg_quadratic_with, StackelbergQuadratic, StackelbergSpec,
};
pub use toy::{make_g3, G3};

pub use crate::gan_mlp::{make_mog_gan, MlpGanProblem, MogGanConfig};

/// The four blocks of a Hessian, split along the leader/follower partition.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub xx: DenseMatrix,
    pub xy: DenseMatrix,
    pub yx: DenseMatrix,
    pub yy: DenseMatrix,
}

impl HessianBlocks {
    pub fn from_full(h: &DenseMatrix, n: usize) -> Self {
        let m = h.rows() - n;
        Self { xx: h.block(0, 0, n, n), xy: h.block(0, n, n, m), yx: h.block(n, 0, m, n), yy: h.block(n, n, m, m) }
    }

    pub fn full(&self) -> DenseMatrix {
        DenseMatrix::from_blocks(&self.xx, &self.xy, &self.yx, &self.yy).expect("blocks come from one Hessian")
    }

    pub fn n(&self) -> usize {
        self.xx.rows()
    }

    pub fn m(&self) -> usize {
        self.yy.rows()
    }

    /// Full Hessian action on a joint direction.
    pub fn apply(&self, v: &JointPoint) -> JointPoint {
        let x = crate::vecspace::add(&self.xx.matvec(&v.x), &self.xy.matvec(&v.y));
        let y = crate::vecspace::add(&self.yx.matvec(&v.x), &self.yy.matvec(&v.y));
        JointPoint { x, y }
    }

    pub fn negated(&self) -> Self {
        Self { xx: self.xx.scale(-1.0), xy: self.xy.scale(-1.0), yx: self.yx.scale(-1.0), yy: self.yy.scale(-1.0) }
    }
}

/// A zero-sum objective `min_x max_y f(x, y)`.
pub trait ZeroSumProblem: Send + Sync {
    fn id(&self) -> String;

    /// `(n, m)`: leader and follower dimensions.
    fn dims(&self) -> (usize, usize);

    fn value(&self, z: &JointPoint) -> f64;

    /// `(∇_x f, ∇_y f)`.
    fn grad(&self, z: &JointPoint) -> JointPoint;

    /// `∇_y f` alone; override when it is cheaper than the full gradient.
    fn grad_y(&self, z: &JointPoint) -> Vec<f64> {
        self.grad(z).y
    }

    /// Analytic (or problem-provided) Hessian blocks, if any.
    fn hessian_blocks(&self, _z: &JointPoint) -> Option<HessianBlocks> {
        None
    }

    fn thrice_differentiable_at_critical(&self) -> bool {
        true
    }

    /// True when `f` is a quadratic, so all third derivatives vanish.
    fn is_quadratic(&self) -> bool {
        false
    }

    /// Declared equilibrium used for distance reporting, when known.
    fn target(&self) -> Option<JointPoint> {
        None
    }

    /// Starting point used when a run does not specify one.
    fn default_start(&self) -> JointPoint;
}

/// A general-sum Stackelberg game: the leader minimises `f`, the follower `g`.
pub trait GeneralSumProblem: Send + Sync {
    fn id(&self) -> String;
    fn dims(&self) -> (usize, usize);
    fn leader_value(&self, z: &JointPoint) -> f64;
    fn follower_value(&self, z: &JointPoint) -> f64;
    fn leader_grad(&self, z: &JointPoint) -> JointPoint;
    fn follower_grad(&self, z: &JointPoint) -> JointPoint;

    /// Blocks `H_**` of `∇²f`.
    fn leader_hessian(&self, z: &JointPoint) -> HessianBlocks;

    /// Blocks `G_**` of `∇²g`.
    fn follower_hessian(&self, z: &JointPoint) -> HessianBlocks;

    /// The genuinely third-order pieces of the leader's implicit curvature:
    /// the derivatives of `G_xy G_yy⁻¹` (with `∇_y f` held fixed) contracted
    /// with `∇_y f`, returned as an `n×n` x-part and an `n×m` y-part.
    ///
    /// The default differentiates `G_xy G_yy⁻¹` by central differences.
    fn third_order_term(&self, z: &JointPoint) -> Result<(DenseMatrix, DenseMatrix)> {
        third_order_term_fd(self, z)
    }

    fn target(&self) -> Option<JointPoint> {
        None
    }

    fn default_start(&self) -> JointPoint;
}

/// Central-difference evaluation of [`GeneralSumProblem::third_order_term`].
pub fn third_order_term_fd<P: GeneralSumProblem + ?Sized>(
    problem: &P,
    z: &JointPoint,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (n, m) = problem.dims();
    let grad_y_f = problem.leader_grad(z).y;
    let flat = z.concat();
    let coupling = |p: &JointPoint| -> Result<DenseMatrix> {
        // G_xy G_yy⁻¹ = (G_yy⁻¹ G_yx)ᵀ by symmetry of ∇²g
        let g = problem.follower_hessian(p);
        let k = crate::vecspace::LuFactors::new(&g.yy)?.solve_matrix(&g.yx)?;
        Ok(k.transpose())
    };
    let mut columns = Vec::with_capacity(n + m);
    for j in 0..(n + m) {
        let h = diff::SECOND_ORDER_STEP * flat[j].abs().max(1.0);
        let mut plus = flat.clone();
        plus[j] += h;
        let mut minus = flat.clone();
        minus[j] -= h;
        let cp = coupling(&JointPoint::from_concat(&plus, n)?)?;
        let cm = coupling(&JointPoint::from_concat(&minus, n)?)?;
        let dir = cp.sub(&cm).scale(1.0 / (2.0 * h));
        columns.push(dir.matvec(&grad_y_f));
    }
    let full = DenseMatrix::from_columns(n, &columns);
    Ok((full.block(0, 0, n, n), full.block(0, n, n, m)))
}

/// Views a zero-sum problem as the general-sum game with `g = -f`.
pub struct ZeroSumAsGeneral(pub Arc<dyn ZeroSumProblem>);

impl GeneralSumProblem for ZeroSumAsGeneral {
    fn id(&self) -> String {
        format!("{}(g=-f)", self.0.id())
    }

    fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn leader_value(&self, z: &JointPoint) -> f64 {
        self.0.value(z)
    }

    fn follower_value(&self, z: &JointPoint) -> f64 {
        -self.0.value(z)
    }

    fn leader_grad(&self, z: &JointPoint) -> JointPoint {
        self.0.grad(z)
    }

    fn follower_grad(&self, z: &JointPoint) -> JointPoint {
        self.0.grad(z).scale(-1.0)
    }

    fn leader_hessian(&self, z: &JointPoint) -> HessianBlocks {
        diff::hessian_blocks_or_fd(self.0.as_ref(), z)
    }

    fn follower_hessian(&self, z: &JointPoint) -> HessianBlocks {
        self.leader_hessian(z).negated()
    }

    fn third_order_term(&self, z: &JointPoint) -> Result<(DenseMatrix, DenseMatrix)> {
        if self.0.is_quadratic() {
            let (n, m) = self.dims();
            return Ok((DenseMatrix::zeros(n, n), DenseMatrix::zeros(n, m)));
        }
        third_order_term_fd(self, z)
    }

    fn target(&self) -> Option<JointPoint> {
        self.0.target()
    }

    fn default_start(&self) -> JointPoint {
        self.0.default_start()
    }
}

/// A problem of either kind, shareable across runs.
#[derive(Clone)]
pub enum Problem {
    ZeroSum(Arc<dyn ZeroSumProblem>),
    GeneralSum(Arc<dyn GeneralSumProblem>),
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Problem::ZeroSum(p) => write!(f, "ZeroSum({})", p.id()),
            Problem::GeneralSum(p) => write!(f, "GeneralSum({})", p.id()),
        }
    }
}

impl Problem {
    pub fn zero_sum(p: impl ZeroSumProblem + 'static) -> Self {
        Problem::ZeroSum(Arc::new(p))
    }

    pub fn general_sum(p: impl GeneralSumProblem + 'static) -> Self {
        Problem::GeneralSum(Arc::new(p))
    }

    pub fn id(&self) -> String {
        match self {
            Problem::ZeroSum(p) => p.id(),
            Problem::GeneralSum(p) => p.id(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Problem::ZeroSum(p) => p.dims(),
            Problem::GeneralSum(p) => p.dims(),
        }
    }

    pub fn default_start(&self) -> JointPoint {
        match self {
            Problem::ZeroSum(p) => p.default_start(),
            Problem::GeneralSum(p) => p.default_start(),
        }
    }

    pub fn target(&self) -> Option<JointPoint> {
        match self {
            Problem::ZeroSum(p) => p.target(),
            Problem::GeneralSum(p) => p.target(),
        }
    }

    pub fn as_zero_sum(&self) -> Option<&Arc<dyn ZeroSumProblem>> {
        match self {
            Problem::ZeroSum(p) => Some(p),
            Problem::GeneralSum(_) => None,
        }
    }

    /// The general-sum view (`g = -f` for zero-sum problems).
    pub fn as_general_sum(&self) -> Arc<dyn GeneralSumProblem> {
        match self {
            Problem::ZeroSum(p) => Arc::new(ZeroSumAsGeneral(p.clone())),
            Problem::GeneralSum(p) => p.clone(),
        }
    }

    /// Gradient norm used for stopping: `‖∇f‖` for zero-sum problems and
    /// `‖(D_x f, ∇_y g)‖` for general-sum ones.
    pub fn stationarity(&self, z: &JointPoint) -> f64 {
        match self {
            Problem::ZeroSum(p) => p.grad(z).norm(),
            Problem::GeneralSum(p) => match crate::optimizers::total_derivative(p.as_ref(), z) {
                Ok(dx) => {
                    let gy = p.follower_grad(z).y;
                    (crate::vecspace::dot(&dx, &dx) + crate::vecspace::dot(&gy, &gy)).sqrt()
                }
                Err(_) => f64::NAN,
            },
        }
    }
}

/// Ids accepted by [`by_id`].
pub const CATALOG_IDS: &[&str] =
    &["g1", "g2", "g3", "quad-sec3", "quad-e2", "mog-gan", "random-quad:<seed>", "stackelberg:<seed>"];

/// Looks up a catalog problem by id.
///
/// `random-quad:<seed>` draws a 2+2 quadratic with mixed-sign spectra and
/// `stackelberg:<seed>` a 2+2 general-sum quadratic. `mog-gan` builds the
/// desk-scale GAN; `mog-gan:<points>:<hidden>:<latent>:<seed>` overrides it.
pub fn by_id(id: &str) -> Result<Problem> {
    let (head, tail) = match id.split_once(':') {
        Some((h, t)) => (h, Some(t)),
        None => (id, None),
    };
    let seed = |t: Option<&str>| -> Result<u64> {
        t.ok_or_else(|| RidgeError::Config(format!("`{head}` needs a seed, e.g. `{head}:0`")))?
            .parse()
            .map_err(|_| RidgeError::Config(format!("bad seed in `{id}`")))
    };
    match head {
        "g1" => Ok(Problem::zero_sum(make_g1())),
        "g2" => Ok(Problem::zero_sum(make_g2())),
        "g3" => Ok(Problem::zero_sum(make_g3())),
        "quad-sec3" => Ok(Problem::zero_sum(make_sec3_quadratic())),
        "quad-e2" => Ok(Problem::zero_sum(make_momentum_quadratic())),
        "random-quad" => Ok(Problem::zero_sum(make_random_quadratic(2, 2, seed(tail)?, &QuadraticSpec::mixed())?)),
        "stackelberg" => Ok(Problem::general_sum(make_stackelberg_quadratic(2, 2, seed(tail)?)?)),
        "mog-gan" => {
            let mut cfg = MogGanConfig::desk();
            if let Some(t) = tail {
                let parts: Vec<&str> = t.split(':').collect();
                let parse = |s: &str| -> Result<u64> {
                    s.parse().map_err(|_| RidgeError::Config(format!("bad mog-gan parameter `{s}` in `{id}`")))
                };
                if parts.len() != 4 {
                    return Err(RidgeError::Config(format!(
                        "`{id}`: expected mog-gan:<points>:<hidden>:<latent>:<seed>"
                    )));
                }
                cfg.n_points = parse(parts[0])? as usize;
                cfg.hidden_units = parse(parts[1])? as usize;
                cfg.latent_dim = parse(parts[2])? as usize;
                cfg.seed = parse(parts[3])?;
            }
            Ok(Problem::zero_sum(MlpGanProblem::new(cfg)?))
        }
        _ => Err(RidgeError::Config(format!("unknown problem `{id}`; known problems: {}", CATALOG_IDS.join(", ")))),
    }
}
