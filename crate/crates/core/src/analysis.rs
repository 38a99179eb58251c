//! Fixed-point classification, dynamics spectra, convergence-rate estimates
//! and the path-angle diagnostic.

use serde::{Deserialize, Serialize};

use crate::diff;
use crate::error::{Result, RidgeError};
use crate::optimizers::{self, FrMode, Hyper, RuleKind, Trajectory, UpdateRule};
use crate::problems::{GeneralSumProblem, Problem, ZeroSumProblem};
use crate::vecspace::{
    self, general_eigenvalues, multiset_distance, sym_eigenvalues, DenseMatrix, JointPoint, LuFactors, Spectrum,
};

pub const DEFAULT_EIG_TOL: f64 = 1e-7;
pub const DEFAULT_GRAD_TOL: f64 = 1e-8;
/// Maximum `‖w(z) - z‖` for `z` to count as a fixed point of a rule.
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub eig: f64,
    pub grad: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { eig: DEFAULT_EIG_TOL, grad: DEFAULT_GRAD_TOL }
    }
}

/// Outcome of the second-order tests. For general-sum games the same three
/// outcomes refer to local Stackelberg equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The sufficient condition holds.
    LocalMinimax,
    /// The necessary condition fails.
    NotLocalMinimax,
    /// Neither: some eigenvalue sits within tolerance of zero.
    Indeterminate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::LocalMinimax => "local-minimax",
            Verdict::NotLocalMinimax => "not-local-minimax",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

/// Verdict from the (ascending) spectra of the follower block, in the
/// maximising convention, and of the leader's Schur complement.
pub fn verdict_from_spectra(hyy: &[f64], schur: &[f64], tol: f64) -> Verdict {
    let hyy_max = hyy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let schur_min = schur.iter().copied().fold(f64::INFINITY, f64::min);
    if hyy_max > tol || schur_min < -tol {
        Verdict::NotLocalMinimax
    } else if hyy_max < -tol && schur_min > tol {
        Verdict::LocalMinimax
    } else {
        Verdict::Indeterminate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    StrictlyStable,
    /// `ρ(J) = 1` within margin: stable, but local convergence is undecided.
    Marginal,
    Unstable,
}

impl Stability {
    pub fn from_radius(rho: f64) -> Self {
        if rho < 1.0 - STABILITY_MARGIN {
            Stability::StrictlyStable
        } else if rho <= 1.0 + STABILITY_MARGIN {
            Stability::Marginal
        } else {
            Stability::Unstable
        }
    }

    pub fn is_stable(self) -> bool {
        self != Stability::Unstable
    }

    pub fn is_strictly_stable(self) -> bool {
        self == Stability::StrictlyStable
    }

    pub fn label(self) -> &'static str {
        match self {
            Stability::StrictlyStable => "strictly stable",
            Stability::Marginal => "stable (marginal)",
            Stability::Unstable => "unstable",
        }
    }
}

/// Spectrum of one rule's update map at a fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpectrum {
    pub rule: String,
    pub spectrum: Spectrum,
    pub is_stable: bool,
    pub is_strictly_stable: bool,
    pub stability: Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub is_stationary: bool,
    pub is_local_minimax_sufficient: bool,
    pub violates_necessary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameKind {
    ZeroSum,
    /// `eig_hyy` holds the eigenvalues of `-G_yy` and `eig_schur` those of `H̃_xx`.
    Stackelberg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub problem: String,
    pub game: GameKind,
    pub point: JointPoint,
    pub grad_norm: f64,
    pub eig_hyy: Vec<f64>,
    pub eig_schur: Vec<f64>,
    pub eig_dynamics: Vec<DynamicsSpectrum>,
    pub flags: Flags,
    pub verdict: Verdict,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub kappa: Option<f64>,
}

impl FixedPointReport {
    /// Adds the spectrum of `rule` at the report's point.
    pub fn add_dynamics(&mut self, rule: &UpdateRule, problem: &Problem) -> Result<&DynamicsSpectrum> {
        let s = stability(rule, problem, &self.point)?;
        self.eig_dynamics.push(s);
        Ok(self.eig_dynamics.last().expect("just pushed"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Largest violation of the necessary condition among the `k`
    /// largest-magnitude eigenvalues of each block: positive eigenvalues of
    /// `H_yy` and negative eigenvalues of the Schur complement count.
    pub fn necessary_violation_top(&self, k: usize) -> f64 {
        let top = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
            s.truncate(k);
            s
        };
        let a = top(&self.eig_hyy).into_iter().fold(0.0f64, |acc, l| acc.max(l));
        let b = top(&self.eig_schur).into_iter().fold(0.0f64, |acc, l| acc.max(-l));
        a.max(b)
    }
}

fn schur_complement(xx: &DenseMatrix, xy: &DenseMatrix, yx: &DenseMatrix, yy: &DenseMatrix) -> Result<DenseMatrix> {
    let k = LuFactors::new(yy)?.solve_matrix(yx)?;
    Ok(xx.sub(&xy.matmul(&k)).symmetrized())
}

/// Second-order classification of a zero-sum stationary point.
pub fn classify_zero_sum(problem: &dyn ZeroSumProblem, z: &JointPoint, tol: &Tolerances) -> Result<FixedPointReport> {
    let grad_norm = problem.grad(z).norm();
    let h = diff::hessian_blocks_or_fd(problem, z);
    let schur = schur_complement(&h.xx, &h.xy, &h.yx, &h.yy)?;
    let eig_hyy = sym_eigenvalues(&h.yy.symmetrized())?;
    let eig_schur = sym_eigenvalues(&schur)?;
    let verdict = verdict_from_spectra(&eig_hyy, &eig_schur, tol.eig);
    let alpha = eig_hyy.iter().map(|l| -l).chain(eig_schur.iter().copied()).fold(f64::INFINITY, f64::min);
    let full = sym_eigenvalues(&h.full().symmetrized())?;
    let beta = full.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    Ok(FixedPointReport {
        problem: problem.id(),
        game: GameKind::ZeroSum,
        point: z.clone(),
        grad_norm,
        flags: flags_for(verdict, grad_norm <= tol.grad),
        eig_hyy,
        eig_schur,
        eig_dynamics: Vec::new(),
        verdict,
        alpha: Some(alpha),
        beta: Some(beta),
        kappa: (alpha > 0.0).then(|| beta / alpha),
    })
}

fn flags_for(verdict: Verdict, is_stationary: bool) -> Flags {
    Flags {
        is_stationary,
        is_local_minimax_sufficient: verdict == Verdict::LocalMinimax,
        violates_necessary: verdict == Verdict::NotLocalMinimax,
    }
}

/// The leader's implicit Hessian
/// `H̃_xx = H_xx - H_xy K - (Kᵀ H_yx + T_x) + (Kᵀ H_yy + T_y) K`, with
/// `K = G_yy⁻¹ G_yx` and `(T_x, T_y)` the third-order terms.
pub fn implicit_leader_hessian<P: GeneralSumProblem + ?Sized>(problem: &P, z: &JointPoint) -> Result<DenseMatrix> {
    let h = problem.leader_hessian(z);
    let g = problem.follower_hessian(z);
    let k = LuFactors::new(&g.yy)?.solve_matrix(&g.yx)?;
    let kt = k.transpose();
    let (tx, ty) = problem.third_order_term(z)?;
    let out = h.xx.sub(&h.xy.matmul(&k)).sub(&kt.matmul(&h.yx).add(&tx)).add(&kt.matmul(&h.yy).add(&ty).matmul(&k));
    Ok(out)
}

/// Second-order classification of a general-sum point as a local
/// Stackelberg equilibrium (`G_yy ≻ 0` and `H̃_xx ≻ 0` sufficient).
pub fn classify_stackelberg<P: GeneralSumProblem + ?Sized>(
    problem: &P,
    z: &JointPoint,
    tol: &Tolerances,
) -> Result<FixedPointReport> {
    let dx = optimizers::total_derivative(problem, z)?;
    let gy = problem.follower_grad(z).y;
    let grad_norm = (vecspace::dot(&dx, &dx) + vecspace::dot(&gy, &gy)).sqrt();
    let g = problem.follower_hessian(z);
    let eig_hyy: Vec<f64> = sym_eigenvalues(&g.yy.symmetrized())?.into_iter().rev().map(|l| -l).collect();
    let eig_schur = sym_eigenvalues(&implicit_leader_hessian(problem, z)?.symmetrized())?;
    let verdict = verdict_from_spectra(&eig_hyy, &eig_schur, tol.eig);
    Ok(FixedPointReport {
        problem: problem.id(),
        game: GameKind::Stackelberg,
        point: z.clone(),
        grad_norm,
        flags: flags_for(verdict, grad_norm <= tol.grad),
        eig_hyy,
        eig_schur,
        eig_dynamics: Vec::new(),
        verdict,
        alpha: None,
        beta: None,
        kappa: None,
    })
}

/// Classifies with whichever test matches the problem kind.
pub fn classify(problem: &Problem, z: &JointPoint, tol: &Tolerances) -> Result<FixedPointReport> {
    match problem {
        Problem::ZeroSum(p) => classify_zero_sum(p.as_ref(), z, tol),
        Problem::GeneralSum(p) => classify_stackelberg(p.as_ref(), z, tol),
    }
}

/// Spectrum of the update map of `rule` at the fixed point `z`.
pub fn stability(rule: &UpdateRule, problem: &Problem, z: &JointPoint) -> Result<DynamicsSpectrum> {
    let next = rule.transition(problem, z, Some(z))?;
    let step_norm = next.distance(z);
    if !(step_norm <= FIXED_POINT_TOL) {
        return Err(RidgeError::NotFixedPoint { step_norm });
    }
    let jac = diff::dynamics_jacobian(rule, problem, z)?;
    let spectrum = general_eigenvalues(&jac)?;
    let s = Stability::from_radius(spectrum.spectral_radius);
    Ok(DynamicsSpectrum {
        rule: rule.id().to_string(),
        spectrum,
        is_stable: s.is_stable(),
        is_strictly_stable: s.is_strictly_stable(),
        stability: s,
    })
}

/// The predicted FR spectrum `eig(I + η_y H_yy) ∪ eig(I - η_x S)` at `z`.
pub fn fr_predicted_spectrum(problem: &dyn ZeroSumProblem, z: &JointPoint, eta_x: f64, eta_y: f64) -> Result<Vec<f64>> {
    let h = diff::hessian_blocks_or_fd(problem, z);
    let schur = schur_complement(&h.xx, &h.xy, &h.yx, &h.yy)?;
    let mut out: Vec<f64> = sym_eigenvalues(&h.yy.symmetrized())?.into_iter().map(|l| 1.0 + eta_y * l).collect();
    out.extend(sym_eigenvalues(&schur)?.into_iter().map(|l| 1.0 - eta_x * l));
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Largest matched distance between the numerical FR Jacobian spectrum and
/// [`fr_predicted_spectrum`].
pub fn decomposition_check(problem: &Problem, z: &JointPoint, eta_x: f64, eta_y: f64) -> Result<f64> {
    let zs = problem
        .as_zero_sum()
        .ok_or_else(|| RidgeError::Contract("decomposition check needs a zero-sum problem".into()))?;
    let rule = UpdateRule::new(RuleKind::Fr, Hyper { fr_mode: FrMode::Exact, ..Hyper::new(eta_x, eta_y) })?;
    let numeric = stability(&rule, problem, z)?.spectrum;
    let predicted = Spectrum::from_real(&fr_predicted_spectrum(zs.as_ref(), z, eta_x, eta_y)?);
    Ok(multiset_distance(&numeric.eigenvalues, &predicted.eigenvalues))
}

/// Largest `η_x` allowed with `η_y = c·η_x`: `2 / max{ρ(S), c·ρ(-H_yy)}`.
pub fn fr_eta_bound(problem: &dyn ZeroSumProblem, z: &JointPoint, c: f64) -> Result<f64> {
    let h = diff::hessian_blocks_or_fd(problem, z);
    let schur = schur_complement(&h.xx, &h.xy, &h.yx, &h.yy)?;
    let rad =
        |m: &DenseMatrix| -> Result<f64> { Ok(sym_eigenvalues(m)?.into_iter().fold(0.0f64, |a, l| a.max(l.abs()))) };
    Ok(2.0 / rad(&schur)?.max(c * rad(&h.yy.symmetrized())?))
}

/// Per-step contraction factor from the last half of a distance sequence:
/// `exp` of the least-squares slope of `ln d_t`.
pub fn estimate_rate_from_distances(distances: &[f64]) -> Result<f64> {
    let (first, last) = match (distances.first(), distances.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(RidgeError::EstimateUnavailable("empty trajectory".into())),
    };
    if !(last < 1e-3 * first) {
        return Err(RidgeError::EstimateUnavailable(format!(
            "trajectory did not converge (final distance {last:e}, initial {first:e})"
        )));
    }
    // drop exact zeros and denormals: they carry no rate information
    let usable = distances.iter().position(|d| *d < 1e-290).unwrap_or(distances.len());
    let window = &distances[usable / 2..usable];
    if window.len() < 2 {
        return Err(RidgeError::EstimateUnavailable("too few points in the last half".into()));
    }
    let k = window.len() as f64;
    let t_mean = (k - 1.0) / 2.0;
    let l_mean = window.iter().map(|d| d.ln()).sum::<f64>() / k;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, d) in window.iter().enumerate() {
        let dt = t as f64 - t_mean;
        num += dt * (d.ln() - l_mean);
        den += dt * dt;
    }
    Ok((num / den).exp())
}

pub fn estimate_rate(trajectory: &Trajectory, target: &JointPoint) -> Result<f64> {
    estimate_rate_from_distances(&trajectory.distances_to(target))
}

/// Signature of a spectrum: counts of positive, negative and (near-)zero values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    pub fn of(values: &[f64], tol: f64) -> Self {
        let positive = values.iter().filter(|v| **v > tol).count();
        let negative = values.iter().filter(|v| **v < -tol).count();
        Self { positive, negative, zero: values.len() - positive - negative }
    }
}

/// Inertia of the (real-spectrum) product `A B` for symmetric `A` and
/// positive definite `B`, together with the largest imaginary part found.
pub fn product_inertia(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> Result<(Inertia, f64)> {
    let s = general_eigenvalues(&a.matmul(b))?;
    Ok((Inertia::of(&s.real_parts(), tol), s.max_imag()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostic {
    pub alphas: Vec<f64>,
    pub path_angle: Vec<f64>,
    pub path_norm: Vec<f64>,
    /// Grid points where the field vanished and the angle was recorded as 0.
    pub zero_field: Vec<bool>,
}

impl PathDiagnostic {
    /// Number of strict sign changes of the angle (zeros skipped).
    pub fn sign_changes(&self) -> usize {
        let signs: Vec<f64> = self.path_angle.iter().filter(|t| **t != 0.0).map(|t| t.signum()).collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// How far `|θ|` inside `|α - center| ≤ halfwidth` rises above its
    /// largest value outside that window.
    pub fn bump_height(&self, center: f64, halfwidth: f64) -> f64 {
        let (mut inside, mut outside) = (0.0f64, 0.0f64);
        for (a, t) in self.alphas.iter().zip(&self.path_angle) {
            if (a - center).abs() <= halfwidth {
                inside = inside.max(t.abs());
            } else {
                outside = outside.max(t.abs());
            }
        }
        (inside - outside).max(0.0)
    }
}

/// Uniform grid of `k` values over `[lo, hi]`.
pub fn alpha_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Default grid: 61 points over `[0.6, 1.2]`.
pub fn default_alpha_grid() -> Vec<f64> {
    alpha_grid(0.6, 1.2, 61)
}

/// Angle between the field `v` and the segment from `z_start` to `z_end`,
/// sampled at `z_start + α (z_end - z_start)`, so `α = 1` is the endpoint.
pub fn path_diagnostic(
    field: impl Fn(&JointPoint) -> Result<JointPoint>,
    z_start: &JointPoint,
    z_end: &JointPoint,
    alphas: &[f64],
) -> Result<PathDiagnostic> {
    let dir = z_end.sub(z_start);
    let dnorm = dir.norm();
    if !(dnorm > 0.0) {
        return Err(RidgeError::Contract("path endpoints coincide".into()));
    }
    let mut out = PathDiagnostic {
        alphas: alphas.to_vec(),
        path_angle: Vec::with_capacity(alphas.len()),
        path_norm: Vec::with_capacity(alphas.len()),
        zero_field: Vec::with_capacity(alphas.len()),
    };
    for &a in alphas {
        let v = field(&z_start.offset(a, &dir))?;
        let vn = v.norm();
        out.path_norm.push(vn);
        if vn == 0.0 {
            out.path_angle.push(0.0);
            out.zero_field.push(true);
        } else {
            let cos = vecspace::dot(&dir.concat(), &v.concat()) / (dnorm * vn);
            out.path_angle.push(cos.clamp(-1.0, 1.0));
            out.zero_field.push(false);
        }
    }
    Ok(out)
}
