use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::quadratic::{gaussian_matrix, random_symmetric_with};
use super::{EigenSpec, GeneralSumProblem, HessianBlocks};
use crate::analysis::{verdict_from_spectra, Verdict, DEFAULT_EIG_TOL};
use crate::error::{Result, RidgeError};
use crate::vecspace::{self, DenseMatrix, JointPoint, LuFactors};

const MAX_REDRAWS: usize = 100;

/// General-sum game with quadratic costs
/// `f = ½ zᵀ A z + aᵀ z` (leader) and `g = ½ zᵀ B z + bᵀ z` (follower).
#[derive(Debug, Clone)]
pub struct StackelbergQuadratic {
    id: String,
    n: usize,
    leader: DenseMatrix,
    leader_lin: Vec<f64>,
    follower: DenseMatrix,
    follower_lin: Vec<f64>,
    equilibrium: JointPoint,
    start: JointPoint,
    ground_truth: Verdict,
}

/// Requested spectra for [`make_stackelberg_quadratic_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct StackelbergSpec {
    /// Eigenvalues of `G_yy` (positive for a follower minimum).
    pub gyy: EigenSpec,
    /// Eigenvalues of the leader's implicit Hessian `H̃_xx`.
    pub htilde: EigenSpec,
    pub coupling: f64,
}

impl Default for StackelbergSpec {
    fn default() -> Self {
        Self {
            gyy: EigenSpec::Uniform { lo: 0.5, hi: 2.0 },
            htilde: EigenSpec::Uniform { lo: 0.5, hi: 2.0 },
            coupling: 1.0,
        }
    }
}

/// A random Stackelberg quadratic whose constructed point is a local
/// Stackelberg equilibrium satisfying the sufficient condition.
pub fn make_stackelberg_quadratic(n: usize, m: usize, seed: u64) -> Result<StackelbergQuadratic> {
    make_stackelberg_quadratic_with(n, m, seed, &StackelbergSpec::default())
}

pub fn make_stackelberg_quadratic_with(
    n: usize,
    m: usize,
    seed: u64,
    spec: &StackelbergSpec,
) -> Result<StackelbergQuadratic> {
    if n == 0 || m == 0 {
        return Err(RidgeError::Spec("both players need at least one coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut attempt = 0;
    let (gyy, gyy_eigs, gyy_lu) = loop {
        let eigs = spec.gyy.draw(m, &mut rng, "G_yy")?;
        let gyy = random_symmetric_with(&eigs, &mut rng);
        match LuFactors::new(&gyy) {
            Ok(lu) => break (gyy, eigs, lu),
            Err(e) if attempt + 1 >= MAX_REDRAWS => return Err(e),
            Err(_) => attempt += 1,
        }
    };
    let gyx = gaussian_matrix(m, n, spec.coupling, &mut rng);
    let gxx = gaussian_matrix(n, n, 1.0, &mut rng).symmetrized();
    let follower = DenseMatrix::from_blocks(&gxx, &gyx.transpose(), &gyx, &gyy)?;

    let htilde_eigs = spec.htilde.draw(n, &mut rng, "leader implicit Hessian")?;
    let htilde = random_symmetric_with(&htilde_eigs, &mut rng);
    let hyy_eigs: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let hyy = random_symmetric_with(&hyy_eigs, &mut rng);
    let hyx = gaussian_matrix(m, n, spec.coupling, &mut rng);
    let hxy = hyx.transpose();
    // K = G_yy⁻¹ G_yx is the follower's implicit response slope; choose H_xx
    // so that H_xx - H_xy K - Kᵀ H_yx + Kᵀ H_yy K equals the requested H̃.
    let k = gyy_lu.solve_matrix(&gyx)?;
    let kt = k.transpose();
    let hxx = htilde.add(&hxy.matmul(&k)).add(&kt.matmul(&hyx)).sub(&kt.matmul(&hyy).matmul(&k)).symmetrized();
    let leader = DenseMatrix::from_blocks(&hxx, &hxy, &hyx, &hyy)?;

    let equilibrium = JointPoint::new(
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let zs = equilibrium.concat();
    // At z*: ∇_y f = r (free), ∇_x f = Kᵀ r so that D_x f = 0, and ∇_y g = 0.
    let r: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut leader_grad_at = kt.matvec(&r);
    leader_grad_at.extend_from_slice(&r);
    let leader_lin = vecspace::sub(&leader_grad_at, &leader.matvec(&zs));
    let mut follower_grad_at: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    follower_grad_at.extend(std::iter::repeat_n(0.0, m));
    let follower_lin = vecspace::sub(&follower_grad_at, &follower.matvec(&zs));

    let start = JointPoint::new(
        equilibrium.x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect(),
        equilibrium.y.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect(),
    );

    let mut neg_gyy: Vec<f64> = gyy_eigs.iter().map(|v| -v).collect();
    neg_gyy.sort_by(f64::total_cmp);
    let mut ht = htilde_eigs;
    ht.sort_by(f64::total_cmp);
    let ground_truth = verdict_from_spectra(&neg_gyy, &ht, DEFAULT_EIG_TOL);

    Ok(StackelbergQuadratic {
        id: format!("stackelberg:{seed}"),
        n,
        leader,
        leader_lin,
        follower,
        follower_lin,
        equilibrium,
        start,
        ground_truth,
    })
}

impl StackelbergQuadratic {
    pub fn equilibrium(&self) -> &JointPoint {
        &self.equilibrium
    }

    /// Classification recorded at construction.
    pub fn ground_truth(&self) -> Verdict {
        self.ground_truth
    }

    pub fn leader_matrix(&self) -> &DenseMatrix {
        &self.leader
    }

    pub fn follower_matrix(&self) -> &DenseMatrix {
        &self.follower
    }

    fn quad(a: &DenseMatrix, lin: &[f64], z: &JointPoint) -> f64 {
        let flat = z.concat();
        0.5 * vecspace::dot(&flat, &a.matvec(&flat)) + vecspace::dot(lin, &flat)
    }

    fn quad_grad(&self, a: &DenseMatrix, lin: &[f64], z: &JointPoint) -> JointPoint {
        let g = vecspace::add(&a.matvec(&z.concat()), lin);
        JointPoint::from_concat(&g, self.n).expect("dimensions fixed at construction")
    }
}

impl GeneralSumProblem for StackelbergQuadratic {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dims(&self) -> (usize, usize) {
        (self.n, self.leader.rows() - self.n)
    }

    fn leader_value(&self, z: &JointPoint) -> f64 {
        Self::quad(&self.leader, &self.leader_lin, z)
    }

    fn follower_value(&self, z: &JointPoint) -> f64 {
        Self::quad(&self.follower, &self.follower_lin, z)
    }

    fn leader_grad(&self, z: &JointPoint) -> JointPoint {
        self.quad_grad(&self.leader, &self.leader_lin, z)
    }

    fn follower_grad(&self, z: &JointPoint) -> JointPoint {
        self.quad_grad(&self.follower, &self.follower_lin, z)
    }

    fn leader_hessian(&self, _z: &JointPoint) -> HessianBlocks {
        HessianBlocks::from_full(&self.leader, self.n)
    }

    fn follower_hessian(&self, _z: &JointPoint) -> HessianBlocks {
        HessianBlocks::from_full(&self.follower, self.n)
    }

    fn third_order_term(&self, _z: &JointPoint) -> Result<(DenseMatrix, DenseMatrix)> {
        let (n, m) = self.dims();
        Ok((DenseMatrix::zeros(n, n), DenseMatrix::zeros(n, m)))
    }

    fn target(&self) -> Option<JointPoint> {
        Some(self.equilibrium.clone())
    }

    fn default_start(&self) -> JointPoint {
        self.start.clone()
    }
}
