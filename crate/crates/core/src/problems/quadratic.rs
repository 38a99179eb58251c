use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{HessianBlocks, ZeroSumProblem};
use crate::analysis::{verdict_from_spectra, Verdict, DEFAULT_EIG_TOL};
use crate::error::{Result, RidgeError};
use crate::vecspace::{self, DenseMatrix, JointPoint, LuFactors};

/// `f(z) = ½ zᵀ A z + bᵀ z` with symmetric `A`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    id: String,
    n: usize,
    m: usize,
    hessian: DenseMatrix,
    linear: Vec<f64>,
    start: JointPoint,
    ground_truth: Option<Verdict>,
}

impl QuadraticProblem {
    pub fn new(id: impl Into<String>, n: usize, hessian: DenseMatrix, linear: Vec<f64>) -> Result<Self> {
        let dim = hessian.rows();
        if !hessian.is_square() || n == 0 || n >= dim {
            return Err(RidgeError::Shape(format!("bad quadratic: {}x{} Hessian, n = {n}", dim, hessian.cols())));
        }
        if !hessian.is_symmetric() {
            return Err(RidgeError::Shape("quadratic Hessian must be symmetric".into()));
        }
        if linear.len() != dim {
            return Err(RidgeError::Shape("linear term length mismatch".into()));
        }
        let m = dim - n;
        let start = JointPoint::new(vec![1.0; n], vec![1.0; m]);
        Ok(Self { id: id.into(), n, m, hessian, linear, start, ground_truth: None })
    }

    /// Homogeneous quadratic (stationary point at the origin).
    pub fn homogeneous(id: impl Into<String>, n: usize, hessian: DenseMatrix) -> Result<Self> {
        let dim = hessian.rows();
        Self::new(id, n, hessian, vec![0.0; dim])
    }

    pub fn with_start(mut self, start: JointPoint) -> Self {
        assert_eq!((start.n(), start.m()), (self.n, self.m));
        self.start = start;
        self
    }

    pub fn hessian(&self) -> &DenseMatrix {
        &self.hessian
    }

    pub fn blocks(&self) -> HessianBlocks {
        HessianBlocks::from_full(&self.hessian, self.n)
    }

    /// Classification recorded by the generator, for generated problems.
    pub fn ground_truth(&self) -> Option<Verdict> {
        self.ground_truth
    }

    /// The unique stationary point, `-A⁻¹ b`.
    pub fn stationary_point(&self) -> Result<JointPoint> {
        let rhs: Vec<f64> = self.linear.iter().map(|v| -v).collect();
        let z = vecspace::solve_dense(&self.hessian, &rhs)?;
        JointPoint::from_concat(&z, self.n)
    }
}

impl ZeroSumProblem for QuadraticProblem {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    fn value(&self, z: &JointPoint) -> f64 {
        let flat = z.concat();
        0.5 * vecspace::dot(&flat, &self.hessian.matvec(&flat)) + vecspace::dot(&self.linear, &flat)
    }

    fn grad(&self, z: &JointPoint) -> JointPoint {
        let flat = z.concat();
        let g = vecspace::add(&self.hessian.matvec(&flat), &self.linear);
        JointPoint::from_concat(&g, self.n).expect("dimensions fixed at construction")
    }

    fn hessian_blocks(&self, _z: &JointPoint) -> Option<HessianBlocks> {
        Some(self.blocks())
    }

    fn is_quadratic(&self) -> bool {
        true
    }

    fn target(&self) -> Option<JointPoint> {
        self.stationary_point().ok()
    }

    fn default_start(&self) -> JointPoint {
        self.start.clone()
    }
}

/// `g1(x, y) = -3x² - y² + 4xy`; the origin is a local minimax.
pub fn make_g1() -> QuadraticProblem {
    let h = DenseMatrix::from_rows(&[&[-6.0, 4.0], &[4.0, -2.0]]);
    QuadraticProblem::homogeneous("g1", 1, h).expect("valid literal").with_start(JointPoint::new(vec![-4.0], vec![3.0]))
}

/// `g2(x, y) = 3x² + y² + 4xy`; the origin is not a local minimax.
pub fn make_g2() -> QuadraticProblem {
    let h = DenseMatrix::from_rows(&[&[6.0, 4.0], &[4.0, 2.0]]);
    QuadraticProblem::homogeneous("g2", 1, h).expect("valid literal").with_start(JointPoint::new(vec![-4.0], vec![3.0]))
}

/// The same objective as [`make_g2`] under the id used for the GDA
/// counterexample: a strictly stable GDA fixed point that is not a local
/// minimax.
pub fn make_sec3_quadratic() -> QuadraticProblem {
    let mut p = make_g2();
    p.id = "quad-sec3".into();
    p.with_start(JointPoint::new(vec![1.0], vec![1.0]))
}

/// `f = -0.45x₁² - 0.5x₂² - 0.5y₁² - 0.05y₂² + x₁y₁ + x₂y₂`.
///
/// Printed elsewhere with an `x₁y₂` coupling; that variant makes the Schur
/// complement indefinite, so the origin would not be a local minimax. The
/// diagonal coupling used here gives `H_yy = diag(-1, -0.1)` and Schur
/// complement `diag(0.1, 9)`.
pub fn make_momentum_quadratic() -> QuadraticProblem {
    let h = DenseMatrix::from_rows(&[
        &[-0.9, 0.0, 1.0, 0.0],
        &[0.0, -1.0, 0.0, 1.0],
        &[1.0, 0.0, -1.0, 0.0],
        &[0.0, 1.0, 0.0, -0.1],
    ]);
    QuadraticProblem::homogeneous("quad-e2", 2, h)
        .expect("valid literal")
        .with_start(JointPoint::new(vec![1.0, 1.0], vec![1.0, 1.0]))
}

/// How the eigenvalues of one block are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum EigenSpec {
    /// Exactly these eigenvalues (length must match the block).
    Values(Vec<f64>),
    /// Independent uniform draws from `[lo, hi]`, redrawn when `|λ| < 1e-3`.
    Uniform { lo: f64, hi: f64 },
}

/// Minimum eigenvalue magnitude a generator may be asked for.
pub const MIN_EIG_MAGNITUDE: f64 = 1e-3;

impl EigenSpec {
    pub(crate) fn draw(&self, dim: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<f64>> {
        match self {
            EigenSpec::Values(v) => {
                if v.len() != dim {
                    return Err(RidgeError::Spec(format!("{what}: {} eigenvalues for dimension {dim}", v.len())));
                }
                if let Some(bad) = v.iter().find(|l| !l.is_finite() || l.abs() < MIN_EIG_MAGNITUDE) {
                    return Err(RidgeError::Spec(format!("{what}: eigenvalue {bad} is (near) zero")));
                }
                Ok(v.clone())
            }
            EigenSpec::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(RidgeError::Spec(format!("{what}: empty range [{lo}, {hi}]")));
                }
                if *lo > -MIN_EIG_MAGNITUDE && *hi < MIN_EIG_MAGNITUDE {
                    return Err(RidgeError::Spec(format!("{what}: range [{lo}, {hi}] only contains (near) zero")));
                }
                let mut out = Vec::with_capacity(dim);
                while out.len() < dim {
                    let v = if lo == hi { *lo } else { rng.random_range(*lo..=*hi) };
                    if v.abs() >= MIN_EIG_MAGNITUDE {
                        out.push(v);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Requested spectra for [`make_random_quadratic`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub hyy: EigenSpec,
    pub schur: EigenSpec,
    /// Standard deviation of the entries of `H_yx`.
    pub coupling: f64,
}

impl QuadraticSpec {
    /// Both blocks drawn from `[-2, 2]`: roughly a quarter of draws are local minimax.
    pub fn mixed() -> Self {
        Self {
            hyy: EigenSpec::Uniform { lo: -2.0, hi: 2.0 },
            schur: EigenSpec::Uniform { lo: -2.0, hi: 2.0 },
            coupling: 1.0,
        }
    }

    /// Draws satisfying the sufficient condition by construction.
    pub fn local_minimax() -> Self {
        Self {
            hyy: EigenSpec::Uniform { lo: -2.0, hi: -0.1 },
            schur: EigenSpec::Uniform { lo: 0.1, hi: 2.0 },
            coupling: 1.0,
        }
    }
}

/// Haar-distributed orthogonal matrix via Gram–Schmidt on a Gaussian matrix.
pub(crate) fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _pass in 0..2 {
            for c in &cols {
                let proj = vecspace::dot(c, &v);
                vecspace::axpy(-proj, c, &mut v);
            }
        }
        let nv = vecspace::norm(&v);
        if nv > 1e-8 {
            cols.push(vecspace::scaled(1.0 / nv, &v));
        }
    }
    DenseMatrix::from_columns(dim, &cols)
}

/// `Q diag(λ) Qᵀ` for a random orthogonal `Q`, symmetrised exactly.
pub(crate) fn random_symmetric_with(eigs: &[f64], rng: &mut ChaCha8Rng) -> DenseMatrix {
    let q = random_orthogonal(eigs.len(), rng);
    q.matmul(&DenseMatrix::diag(eigs)).matmul(&q.transpose()).symmetrized()
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random homogeneous quadratic whose `H_yy` and Schur complement
/// `H_xx - H_xy H_yy⁻¹ H_yx` have the requested spectra.
pub fn make_random_quadratic(n: usize, m: usize, seed: u64, spec: &QuadraticSpec) -> Result<QuadraticProblem> {
    if n == 0 || m == 0 {
        return Err(RidgeError::Spec("both players need at least one coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hyy_eigs = spec.hyy.draw(m, &mut rng, "H_yy")?;
    let schur_eigs = spec.schur.draw(n, &mut rng, "Schur complement")?;
    let hyy = random_symmetric_with(&hyy_eigs, &mut rng);
    let schur = random_symmetric_with(&schur_eigs, &mut rng);
    let hyx = gaussian_matrix(m, n, spec.coupling, &mut rng);
    let hxy = hyx.transpose();
    let solved = LuFactors::new(&hyy)?.solve_matrix(&hyx)?;
    let hxx = schur.add(&hxy.matmul(&solved)).symmetrized();
    let full = DenseMatrix::from_blocks(&hxx, &hxy, &hyx, &hyy)?;
    let start = JointPoint::new(
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let mut p = QuadraticProblem::homogeneous(format!("random-quad:{seed}"), n, full)?.with_start(start);
    let mut hyy_sorted = hyy_eigs;
    hyy_sorted.sort_by(f64::total_cmp);
    let mut schur_sorted = schur_eigs;
    schur_sorted.sort_by(f64::total_cmp);
    p.ground_truth = Some(verdict_from_spectra(&hyy_sorted, &schur_sorted, DEFAULT_EIG_TOL));
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::classify_zero_sum;
    use crate::vecspace::sym_eigenvalues;

    #[test]
    fn g1_values_and_gradient() {
        let g1 = make_g1();
        assert_eq!(g1.value(&JointPoint::zeros(1, 1)), 0.0);
        let g = g1.grad(&JointPoint::new(vec![1.0], vec![0.0]));
        assert_eq!((g.x[0], g.y[0]), (-6.0, 4.0));
        let h = g1.blocks();
        assert_eq!((h.xx[(0, 0)], h.xy[(0, 0)], h.yx[(0, 0)], h.yy[(0, 0)]), (-6.0, 4.0, 4.0, -2.0));
    }

    #[test]
    fn g2_values() {
        let g2 = make_g2();
        assert_eq!(g2.value(&JointPoint::new(vec![1.0], vec![1.0])), 8.0);
        assert_eq!(g2.blocks().yy[(0, 0)], 2.0);
    }

    #[test]
    fn momentum_quadratic_blocks() {
        let p = make_momentum_quadratic();
        let h = p.blocks();
        assert_eq!(h.yy, DenseMatrix::diag(&[-1.0, -0.1]));
        let report = classify_zero_sum(&p, &JointPoint::zeros(2, 2), &Default::default()).unwrap();
        assert!((report.eig_schur[0] - 0.1).abs() < 1e-12);
        assert!((report.eig_schur[1] - 9.0).abs() < 1e-12);
        assert_eq!(report.verdict, Verdict::LocalMinimax);
    }

    #[test]
    fn printed_cross_term_would_break_the_claim() {
        // coupling x₁y₂ + x₂y₂: Schur complement is indefinite
        let h = DenseMatrix::from_rows(&[
            &[-0.9, 0.0, 0.0, 1.0],
            &[0.0, -1.0, 0.0, 1.0],
            &[0.0, 0.0, -1.0, 0.0],
            &[1.0, 1.0, 0.0, -0.1],
        ]);
        let p = QuadraticProblem::homogeneous("printed", 2, h).unwrap();
        let report = classify_zero_sum(&p, &JointPoint::zeros(2, 2), &Default::default()).unwrap();
        assert_eq!(report.verdict, Verdict::NotLocalMinimax);
    }

    #[test]
    fn random_quadratic_hits_requested_spectra() {
        let spec = QuadraticSpec {
            hyy: EigenSpec::Values(vec![-1.0, -0.5, 2.0]),
            schur: EigenSpec::Values(vec![0.25, 3.0]),
            coupling: 1.5,
        };
        let p = make_random_quadratic(2, 3, 42, &spec).unwrap();
        let h = p.blocks();
        let got = sym_eigenvalues(&h.yy).unwrap();
        for (a, b) in got.iter().zip([-1.0, -0.5, 2.0]) {
            assert!((a - b).abs() < 1e-8);
        }
        let k = LuFactors::new(&h.yy).unwrap().solve_matrix(&h.yx).unwrap();
        let schur = h.xx.sub(&h.xy.matmul(&k)).symmetrized();
        let got = sym_eigenvalues(&schur).unwrap();
        for (a, b) in got.iter().zip([0.25, 3.0]) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(p.ground_truth(), Some(Verdict::NotLocalMinimax));
    }

    #[test]
    fn random_quadratic_small_examples() {
        let sufficient =
            QuadraticSpec { hyy: EigenSpec::Values(vec![-1.0]), schur: EigenSpec::Values(vec![1.0]), coupling: 1.0 };
        let p = make_random_quadratic(1, 1, 0, &sufficient).unwrap();
        assert_eq!(p.ground_truth(), Some(Verdict::LocalMinimax));
        let violating = QuadraticSpec { hyy: EigenSpec::Values(vec![1.0]), ..sufficient };
        let p = make_random_quadratic(1, 1, 0, &violating).unwrap();
        assert_eq!(p.ground_truth(), Some(Verdict::NotLocalMinimax));
    }

    #[test]
    fn random_quadratic_is_deterministic() {
        let a = make_random_quadratic(3, 2, 17, &QuadraticSpec::mixed()).unwrap();
        let b = make_random_quadratic(3, 2, 17, &QuadraticSpec::mixed()).unwrap();
        let bits = |p: &QuadraticProblem| p.hessian().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = make_random_quadratic(3, 2, 18, &QuadraticSpec::mixed()).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let zero =
            QuadraticSpec { hyy: EigenSpec::Values(vec![0.0]), schur: EigenSpec::Values(vec![1.0]), coupling: 1.0 };
        assert!(matches!(make_random_quadratic(1, 1, 0, &zero), Err(RidgeError::Spec(_))));
        let dead = QuadraticSpec { hyy: EigenSpec::Uniform { lo: -1e-4, hi: 1e-4 }, ..QuadraticSpec::mixed() };
        assert!(matches!(make_random_quadratic(1, 1, 0, &dead), Err(RidgeError::Spec(_))));
        let wrong_len = QuadraticSpec { hyy: EigenSpec::Values(vec![-1.0, -2.0]), ..QuadraticSpec::mixed() };
        assert!(matches!(make_random_quadratic(1, 1, 0, &wrong_len), Err(RidgeError::Spec(_))));
    }

    #[test]
    fn ground_truth_agrees_with_classifier() {
        for seed in 0..1000 {
            let n = 1 + (seed % 3) as usize;
            let m = 1 + (seed % 4) as usize;
            let p = make_random_quadratic(n, m, seed, &QuadraticSpec::mixed()).unwrap();
            let report = classify_zero_sum(&p, &JointPoint::zeros(n, m), &Default::default()).unwrap();
            assert_eq!(Some(report.verdict), p.ground_truth(), "seed {seed}");
        }
    }
}
