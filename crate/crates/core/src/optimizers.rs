//! Update rules: the Follow-the-Ridge family and the baselines, behind one
//! stateful [`UpdateRule`] interface.
//!
//! Zero-sum rules use the descent field `v = (∇_x f, -∇_y f)`; a learning
//! rate pair `(η_x, η_y)` scales the two blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::{self, HvpMode, HvpOracle};
use crate::error::{Result, RidgeError};
use crate::problems::{GeneralSumProblem, Problem, ZeroSumProblem};
use crate::solvers::{self, CgConfig, DampingState};
use crate::vecspace::{self, sym_eigenvalues, DenseMatrix, JointPoint, LuFactors};

/// Iterates whose norm exceeds this are flagged as diverged.
pub const DIVERGENCE_NORM: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Gda,
    Gda2ts,
    Ogda,
    Eg,
    Sga,
    Co,
    Fr,
    FrCg,
    FrMom,
    FrPrecond,
    FrGeneral,
    BestResponse,
}

impl RuleKind {
    pub const ALL: [RuleKind; 12] = [
        RuleKind::Gda,
        RuleKind::Gda2ts,
        RuleKind::Ogda,
        RuleKind::Eg,
        RuleKind::Sga,
        RuleKind::Co,
        RuleKind::Fr,
        RuleKind::FrCg,
        RuleKind::FrMom,
        RuleKind::FrPrecond,
        RuleKind::FrGeneral,
        RuleKind::BestResponse,
    ];

    pub fn id(self) -> &'static str {
        match self {
            RuleKind::Gda => "gda",
            RuleKind::Gda2ts => "gda2ts",
            RuleKind::Ogda => "ogda",
            RuleKind::Eg => "eg",
            RuleKind::Sga => "sga",
            RuleKind::Co => "co",
            RuleKind::Fr => "fr",
            RuleKind::FrCg => "fr-cg",
            RuleKind::FrMom => "fr-mom",
            RuleKind::FrPrecond => "fr-precond",
            RuleKind::FrGeneral => "fr-general",
            RuleKind::BestResponse => "best-response",
        }
    }

    fn is_fr(self) -> bool {
        matches!(self, RuleKind::Fr | RuleKind::FrCg | RuleKind::FrMom | RuleKind::FrPrecond)
    }

    fn is_gda(self) -> bool {
        matches!(self, RuleKind::Gda | RuleKind::Gda2ts)
    }

    fn is_general(self) -> bool {
        matches!(self, RuleKind::FrGeneral | RuleKind::BestResponse)
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for RuleKind {
    type Err = RidgeError;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL.into_iter().find(|k| k.id() == s).ok_or_else(|| {
            let known: Vec<&str> = RuleKind::ALL.iter().map(|k| k.id()).collect();
            RidgeError::Config(format!("unknown rule `{s}`; known rules: {}", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrMode {
    /// Dense solve with `H_yy` at the current point.
    #[default]
    Exact,
    /// Finite-difference cross term and damped CG, evaluated after the
    /// leader step.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumVariant {
    /// `+ γ (z_t - z_{t-1})` after the corrected step.
    #[default]
    HeavyBall,
    /// Buffers `m_x, m_y` folded in before the correction term.
    Buffered,
}

/// Preconditioners `P₁` (leader) and `P₂` (follower).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Precond {
    #[default]
    Identity,
    Diagonal {
        p1: Vec<f64>,
        p2: Vec<f64>,
    },
    Dense {
        p1: DenseMatrix,
        p2: DenseMatrix,
    },
    /// `a ← decay·a + (1-decay)·g²`, `P = diag(1 / (√a + eps))`.
    Rmsprop {
        decay: f64,
        eps: f64,
    },
}

impl Precond {
    pub fn rmsprop() -> Self {
        Precond::Rmsprop { decay: 0.99, eps: 1e-8 }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(RidgeError::Config(format!("preconditioner {what}")));
        match self {
            Precond::Identity => Ok(()),
            Precond::Diagonal { p1, p2 } => {
                if p1.iter().chain(p2).all(|v| v.is_finite() && *v > 0.0) {
                    Ok(())
                } else {
                    bad("diagonal must be positive and finite")
                }
            }
            Precond::Dense { p1, p2 } => {
                for p in [p1, p2] {
                    if !p.is_square() || !p.is_symmetric() {
                        return bad("must be symmetric");
                    }
                    let eigs = sym_eigenvalues(p)?;
                    if eigs.first().is_none_or(|l| *l <= 0.0) {
                        return bad("must be positive definite");
                    }
                }
                Ok(())
            }
            Precond::Rmsprop { decay, eps } => {
                if (0.0..1.0).contains(decay) && *eps > 0.0 {
                    Ok(())
                } else {
                    bad("rmsprop needs decay in [0, 1) and eps > 0")
                }
            }
        }
    }
}

/// Hyperparameters shared by every rule; each rule reads what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub eta_x: f64,
    pub eta_y: f64,
    /// Momentum; FR rules need `[0, 1)`, GDA accepts `(-1, 1)`.
    pub gamma: f64,
    pub lambda_sga: f64,
    pub gamma_co: f64,
    pub precond: Precond,
    pub fr_mode: FrMode,
    pub momentum: MomentumVariant,
    pub cg: CgConfig,
    pub damping: DampingState,
    /// Hessian-vector products for CG mode; `None` picks analytic blocks
    /// when the problem has them.
    pub hvp: Option<HvpMode>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            eta_x: 0.05,
            eta_y: 0.05,
            gamma: 0.0,
            lambda_sga: 1.0,
            gamma_co: 0.1,
            precond: Precond::Identity,
            fr_mode: FrMode::Exact,
            momentum: MomentumVariant::HeavyBall,
            cg: CgConfig::default(),
            damping: DampingState::default(),
            hvp: Some(HvpMode::FiniteDifference),
        }
    }
}

impl Hyper {
    pub fn uniform(eta: f64) -> Self {
        Self { eta_x: eta, eta_y: eta, ..Default::default() }
    }

    pub fn new(eta_x: f64, eta_y: f64) -> Self {
        Self { eta_x, eta_y, ..Default::default() }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepAux {
    pub correction_norm: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub cg_iters: Option<usize>,
}

/// Internal state of a rule; [`UpdateRule::reset`] restores the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleState {
    pub prev_point: Option<JointPoint>,
    pub prev_field: Option<JointPoint>,
    pub m_x: Option<Vec<f64>>,
    pub m_y: Option<Vec<f64>>,
    pub rms_x: Option<Vec<f64>>,
    pub rms_y: Option<Vec<f64>>,
    pub damping: DampingState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRule {
    kind: RuleKind,
    hyper: Hyper,
    state: RuleState,
}

impl UpdateRule {
    pub fn new(kind: RuleKind, mut hyper: Hyper) -> Result<Self> {
        if kind == RuleKind::FrCg {
            hyper.fr_mode = FrMode::Cg;
        }
        let cfg = |msg: String| Err(RidgeError::Config(msg));
        if !(hyper.eta_x.is_finite() && hyper.eta_y.is_finite()) || hyper.eta_x < 0.0 || hyper.eta_y < 0.0 {
            return cfg(format!(
                "learning rates must be finite and non-negative, got ({}, {})",
                hyper.eta_x, hyper.eta_y
            ));
        }
        let g = hyper.gamma;
        if kind.is_gda() {
            if !(g > -1.0 && g < 1.0) {
                return cfg(format!("GDA momentum must lie in (-1, 1), got {g}"));
            }
        } else if kind.is_fr() {
            if !(0.0..1.0).contains(&g) {
                return cfg(format!("FR momentum must lie in [0, 1), got {g}"));
            }
        } else if g != 0.0 {
            return cfg(format!("rule `{kind}` takes no momentum"));
        }
        if !(hyper.gamma_co >= 0.0 && hyper.gamma_co.is_finite()) {
            return cfg("consensus weight must be non-negative".into());
        }
        if !hyper.lambda_sga.is_finite() {
            return cfg("SGA lambda must be finite".into());
        }
        if hyper.cg.max_iters == 0 {
            return cfg("CG needs max_iters >= 1".into());
        }
        if !(hyper.damping.lambda >= 0.0 && hyper.damping.floor >= 0.0) {
            return cfg("damping must be non-negative".into());
        }
        hyper.precond.validate()?;
        if hyper.precond != Precond::Identity && !(kind.is_fr() || kind.is_gda()) {
            return cfg(format!("rule `{kind}` takes no preconditioner"));
        }
        let state = RuleState { damping: hyper.damping, ..Default::default() };
        Ok(Self { kind, hyper, state })
    }

    pub fn from_id(id: &str, hyper: Hyper) -> Result<Self> {
        Self::new(id.parse()?, hyper)
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn id(&self) -> &'static str {
        self.kind.id()
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn state(&self) -> &RuleState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = RuleState { damping: self.hyper.damping, ..Default::default() };
    }

    /// The same rule with an adaptive preconditioner replaced by the constant
    /// diagonal its accumulators currently give. Other rules come back as is.
    pub fn frozen(&self) -> Result<UpdateRule> {
        let Precond::Rmsprop { eps, .. } = self.hyper.precond else {
            return Ok(self.clone());
        };
        let (Some(ax), Some(ay)) = (&self.state.rms_x, &self.state.rms_y) else {
            return Err(RidgeError::Contract("cannot freeze a preconditioner before the first step".into()));
        };
        let diag = |a: &[f64]| a.iter().map(|v| 1.0 / (v.sqrt() + eps)).collect();
        let hyper = Hyper { precond: Precond::Diagonal { p1: diag(ax), p2: diag(ay) }, ..self.hyper.clone() };
        UpdateRule::new(self.kind, hyper)
    }

    /// Whether one step depends on the previous iterate, so that Jacobians
    /// live on the augmented space `(z_t, z_{t-1})`.
    pub fn is_two_step(&self) -> Result<bool> {
        if matches!(self.hyper.precond, Precond::Rmsprop { .. }) {
            return Err(RidgeError::Contract("adaptive preconditioner state has no augmented-space form".into()));
        }
        Ok(self.kind == RuleKind::Ogda || ((self.kind.is_fr() || self.kind.is_gda()) && self.hyper.gamma != 0.0))
    }

    /// One step from the rule's current state, updating that state.
    pub fn step(&mut self, problem: &Problem, z: &JointPoint) -> Result<(JointPoint, StepAux)> {
        let mut state = std::mem::take(&mut self.state);
        let out = self.advance(problem, z, &mut state);
        if out.is_ok() {
            state.prev_point = Some(z.clone());
        }
        self.state = state;
        out
    }

    /// One step as a pure map of `(z_t, z_{t-1})` with all other state zeroed.
    /// Momentum is applied in the heavy-ball form.
    pub fn transition(&self, problem: &Problem, z: &JointPoint, prev: Option<&JointPoint>) -> Result<JointPoint> {
        self.is_two_step()?;
        let mut hyper = self.hyper.clone();
        hyper.momentum = MomentumVariant::HeavyBall;
        let rule =
            UpdateRule { kind: self.kind, state: RuleState { damping: hyper.damping, ..Default::default() }, hyper };
        let mut state = rule.state.clone();
        state.prev_point = prev.cloned();
        if self.kind == RuleKind::Ogda {
            if let (Some(p), Problem::ZeroSum(zs)) = (prev, problem) {
                state.prev_field = Some(descent_field(zs.as_ref(), p));
            }
        }
        Ok(rule.advance(problem, z, &mut state)?.0)
    }

    /// Raw step `w(z) - z` from zeroed state.
    pub fn direction(&self, problem: &Problem, z: &JointPoint) -> Result<JointPoint> {
        Ok(self.transition(problem, z, Some(z))?.sub(z))
    }

    fn advance(&self, problem: &Problem, z: &JointPoint, state: &mut RuleState) -> Result<(JointPoint, StepAux)> {
        let h = &self.hyper;
        if self.kind.is_general() {
            let gs = problem.as_general_sum();
            let next = match self.kind {
                RuleKind::FrGeneral => step_fr_general(gs.as_ref(), z, h)?,
                _ => step_best_response(gs.as_ref(), z, h)?,
            };
            return Ok((next, StepAux::default()));
        }
        let zs = problem.as_zero_sum().ok_or_else(|| {
            RidgeError::Contract(format!(
                "rule `{}` needs a zero-sum problem; `{}` is general-sum",
                self.kind,
                problem.id()
            ))
        })?;
        let p = zs.as_ref();
        match self.kind {
            RuleKind::Gda | RuleKind::Gda2ts => {
                let next = if h.precond == Precond::Identity {
                    step_gda(p, z, h)
                } else {
                    let g = p.grad(z);
                    let dx = apply_precond(&h.precond, &g.x, true, &mut state.rms_x)?;
                    let dy = apply_precond(&h.precond, &g.y, false, &mut state.rms_y)?;
                    JointPoint { x: step_along(&z.x, -h.eta_x, &dx), y: step_along(&z.y, h.eta_y, &dy) }
                };
                Ok((heavy_ball(next, z, state.prev_point.as_ref(), h.gamma), StepAux::default()))
            }
            RuleKind::Ogda => {
                let v = descent_field(p, z);
                let next = ogda_from_fields(z, &v, state.prev_field.as_ref(), h);
                state.prev_field = Some(v);
                Ok((next, StepAux::default()))
            }
            RuleKind::Eg => Ok((step_eg(p, z, h), StepAux::default())),
            RuleKind::Sga => Ok((step_sga(p, z, h)?, StepAux::default())),
            RuleKind::Co => Ok((step_co(p, z, h)?, StepAux::default())),
            _ => fr_engine(p, z, h, state),
        }
    }
}

/// `(∇_x f, -∇_y f)`.
pub fn descent_field(problem: &dyn ZeroSumProblem, z: &JointPoint) -> JointPoint {
    let g = problem.grad(z);
    JointPoint { x: g.x, y: g.y.iter().map(|v| -v).collect() }
}

fn step_along(base: &[f64], a: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + a * d).collect()
}

fn scale_blocks(v: &JointPoint, eta_x: f64, eta_y: f64) -> JointPoint {
    JointPoint { x: vecspace::scaled(eta_x, &v.x), y: vecspace::scaled(eta_y, &v.y) }
}

fn heavy_ball(next: JointPoint, z: &JointPoint, prev: Option<&JointPoint>, gamma: f64) -> JointPoint {
    match prev {
        Some(p) if gamma != 0.0 => next.add(&z.sub(p).scale(gamma)),
        _ => next,
    }
}

/// Simultaneous gradient descent-ascent.
pub fn step_gda(problem: &dyn ZeroSumProblem, z: &JointPoint, h: &Hyper) -> JointPoint {
    z.sub(&scale_blocks(&descent_field(problem, z), h.eta_x, h.eta_y))
}

/// Optimistic GDA; without a previous field the step is plain GDA.
pub fn step_ogda(
    problem: &dyn ZeroSumProblem,
    z: &JointPoint,
    prev_field: Option<&JointPoint>,
    h: &Hyper,
) -> JointPoint {
    ogda_from_fields(z, &descent_field(problem, z), prev_field, h)
}

fn ogda_from_fields(z: &JointPoint, v: &JointPoint, prev: Option<&JointPoint>, h: &Hyper) -> JointPoint {
    match prev {
        None => z.sub(&scale_blocks(v, h.eta_x, h.eta_y)),
        Some(vp) => z.sub(&scale_blocks(&v.scale(2.0).sub(vp), h.eta_x, h.eta_y)),
    }
}

/// Extragradient with equal inner and outer learning rates.
pub fn step_eg(problem: &dyn ZeroSumProblem, z: &JointPoint, h: &Hyper) -> JointPoint {
    let half = step_gda(problem, z, h);
    z.sub(&scale_blocks(&descent_field(problem, &half), h.eta_x, h.eta_y))
}

/// Symplectic gradient adjustment: `-η [[I, -λH_xy], [λH_yx, I]] v`.
pub fn step_sga(problem: &dyn ZeroSumProblem, z: &JointPoint, h: &Hyper) -> Result<JointPoint> {
    let g = problem.grad(z);
    let oracle = HvpOracle::preferred(problem, z);
    let mut dx = g.x.clone();
    let mut dy: Vec<f64> = g.y.iter().map(|v| -v).collect();
    if h.lambda_sga != 0.0 {
        vecspace::axpy(h.lambda_sga, &oracle.hvp_xy(problem, z, &g.y)?, &mut dx);
        vecspace::axpy(h.lambda_sga, &oracle.hvp_yx(problem, z, &g.x)?, &mut dy);
    }
    Ok(z.sub(&scale_blocks(&JointPoint { x: dx, y: dy }, h.eta_x, h.eta_y)))
}

/// Consensus optimisation: `-η v - γη ∇‖∇f‖²`, with `∇‖∇f‖² = 2 ∇²f ∇f`.
pub fn step_co(problem: &dyn ZeroSumProblem, z: &JointPoint, h: &Hyper) -> Result<JointPoint> {
    let g = problem.grad(z);
    let mut d = JointPoint { x: g.x.clone(), y: g.y.iter().map(|v| -v).collect() };
    if h.gamma_co != 0.0 {
        let hg = HvpOracle::preferred(problem, z).hvp(problem, z, &g)?;
        d = d.offset(2.0 * h.gamma_co, &hg);
    }
    Ok(z.sub(&scale_blocks(&d, h.eta_x, h.eta_y)))
}

/// Plain Follow-the-Ridge step in the given mode, with no momentum or
/// preconditioning. CG mode reads and updates `damping`.
pub fn step_fr(
    problem: &dyn ZeroSumProblem,
    z: &JointPoint,
    h: &Hyper,
    mode: FrMode,
    damping: &mut DampingState,
) -> Result<(JointPoint, StepAux)> {
    let plain = Hyper { gamma: 0.0, precond: Precond::Identity, fr_mode: mode, ..h.clone() };
    let mut state = RuleState { damping: *damping, ..Default::default() };
    let out = fr_engine(problem, z, &plain, &mut state)?;
    *damping = state.damping;
    Ok(out)
}

fn apply_precond(p: &Precond, g: &[f64], leader: bool, acc: &mut Option<Vec<f64>>) -> Result<Vec<f64>> {
    let len_err = || RidgeError::Config("preconditioner size does not match the problem".into());
    match p {
        Precond::Identity => Ok(g.to_vec()),
        Precond::Diagonal { p1, p2 } => {
            let d = if leader { p1 } else { p2 };
            if d.len() != g.len() {
                return Err(len_err());
            }
            Ok(g.iter().zip(d).map(|(a, b)| a * b).collect())
        }
        Precond::Dense { p1, p2 } => {
            let d = if leader { p1 } else { p2 };
            if d.rows() != g.len() {
                return Err(len_err());
            }
            Ok(d.matvec(g))
        }
        Precond::Rmsprop { decay, eps } => {
            let a = acc.get_or_insert_with(|| vec![0.0; g.len()]);
            for (ai, gi) in a.iter_mut().zip(g) {
                *ai = decay * *ai + (1.0 - decay) * gi * gi;
            }
            Ok(g.iter().zip(a.iter()).map(|(gi, ai)| gi / (ai.sqrt() + eps)).collect())
        }
    }
}

/// FR with optional preconditioning and momentum.
///
/// With leader step `s_x = η_x P₁∇_x f` and follower step `s_y = -η_y P₂∇_y f`
/// (plus `γ m` in the buffered variant), the update is
/// `x' = x - s_x`, `y' = y - s_y + H_yy⁻¹ H_yx s_x`.
fn fr_engine(
    problem: &dyn ZeroSumProblem,
    z: &JointPoint,
    h: &Hyper,
    state: &mut RuleState,
) -> Result<(JointPoint, StepAux)> {
    let g = problem.grad(z);
    if !g.is_finite() {
        return Err(RidgeError::Overflow("gradient is not finite".into()));
    }
    let mut sx = vecspace::scaled(h.eta_x, &apply_precond(&h.precond, &g.x, true, &mut state.rms_x)?);
    let mut sy = vecspace::scaled(-h.eta_y, &apply_precond(&h.precond, &g.y, false, &mut state.rms_y)?);
    let buffered = h.momentum == MomentumVariant::Buffered && h.gamma != 0.0;
    if buffered {
        if let Some(mx) = &state.m_x {
            vecspace::axpy(h.gamma, mx, &mut sx);
        }
        if let Some(my) = &state.m_y {
            vecspace::axpy(h.gamma, my, &mut sy);
        }
    }

    let mut aux = StepAux::default();
    let correction = match h.fr_mode {
        FrMode::Exact => {
            let blocks = diff::hessian_blocks_or_fd(problem, z);
            let rhs = blocks.yx.matvec(&sx);
            LuFactors::new(&blocks.yy)?.solve(&rhs)?
        }
        FrMode::Cg => {
            let neg_sx: Vec<f64> = sx.iter().map(|v| -v).collect();
            let b = diff::cross_hessian_step(problem, z, &neg_sx);
            let post = JointPoint { x: vecspace::sub(&z.x, &sx), y: z.y.clone() };
            let oracle = match h.hvp {
                Some(mode) => HvpOracle { mode, fd_step: None },
                None => HvpOracle::preferred(problem, &post),
            };
            let (c, damping) = solvers::solve_correction(problem, &post, &b, &state.damping, &h.cg, &oracle)?;
            state.damping = damping;
            aux.lambda = Some(c.lambda_used);
            aux.rho = c.rho;
            aux.cg_iters = Some(c.cg_iters);
            c.delta_y
        }
    };
    aux.correction_norm = Some(vecspace::norm(&correction));

    let next = JointPoint { x: vecspace::sub(&z.x, &sx), y: vecspace::add(&vecspace::sub(&z.y, &sy), &correction) };
    let next = if buffered {
        state.m_x = Some(sx);
        state.m_y = Some(sy);
        next
    } else {
        heavy_ball(next, z, state.prev_point.as_ref(), h.gamma)
    };
    if !next.is_finite() {
        return Err(RidgeError::Overflow("FR iterate is not finite".into()));
    }
    Ok((next, aux))
}

/// `D_x f = ∇_x f - G_xy G_yy⁻¹ ∇_y f`.
pub fn total_derivative<P: GeneralSumProblem + ?Sized>(problem: &P, z: &JointPoint) -> Result<Vec<f64>> {
    let g = problem.follower_hessian(z);
    let f = problem.leader_grad(z);
    let w = LuFactors::new(&g.yy)?.solve(&f.y)?;
    Ok(vecspace::sub(&f.x, &g.xy.matvec(&w)))
}

/// General-sum FR: `x' = x - η_x D_x f`, `y' = y - η_y ∇_y g + η_x G_yy⁻¹ G_yx D_x f`.
pub fn step_fr_general<P: GeneralSumProblem + ?Sized>(problem: &P, z: &JointPoint, h: &Hyper) -> Result<JointPoint> {
    let gb = problem.follower_hessian(z);
    let lu = LuFactors::new(&gb.yy)?;
    let f = problem.leader_grad(z);
    let dx = vecspace::sub(&f.x, &gb.xy.matvec(&lu.solve(&f.y)?));
    let sx = vecspace::scaled(h.eta_x, &dx);
    let corr = lu.solve(&gb.yx.matvec(&sx))?;
    let gy = problem.follower_grad(z).y;
    let mut y = z.y.clone();
    vecspace::axpy(-h.eta_y, &gy, &mut y);
    Ok(JointPoint { x: vecspace::sub(&z.x, &sx), y: vecspace::add(&y, &corr) })
}

/// Best-response gradient dynamics: the leader follows `D_x f`, the follower
/// descends `g` with no correction.
pub fn step_best_response<P: GeneralSumProblem + ?Sized>(problem: &P, z: &JointPoint, h: &Hyper) -> Result<JointPoint> {
    let dx = total_derivative(problem, z)?;
    let gy = problem.follower_grad(z).y;
    let mut x = z.x.clone();
    vecspace::axpy(-h.eta_x, &dx, &mut x);
    let mut y = z.y.clone();
    vecspace::axpy(-h.eta_y, &gy, &mut y);
    Ok(JointPoint { x, y })
}

/// Recorded iterates of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rule: String,
    pub problem: String,
    pub points: Vec<JointPoint>,
    /// Stationarity measure at each point.
    pub grad_norms: Vec<f64>,
    /// Diagnostics of the step leaving each point (one fewer than points).
    pub aux: Vec<StepAux>,
    pub diverged: bool,
    pub stopped_early: bool,
    /// Error that ended the run, if any (singular Hessian, CG failure...).
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &JointPoint {
        self.points.last().expect("a trajectory holds at least its start")
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self.grad_norms.last().expect("non-empty")
    }

    pub fn iterations(&self) -> usize {
        self.points.len() - 1
    }

    pub fn distances_to(&self, target: &JointPoint) -> Vec<f64> {
        self.points.iter().map(|p| p.distance(target)).collect()
    }

    /// First iteration whose distance to `target` is at most `tol`.
    pub fn iterations_to(&self, target: &JointPoint, tol: f64) -> Option<usize> {
        self.points.iter().position(|p| p.distance(target) <= tol)
    }
}

/// Runs `rule` from `start` for up to `n_iters` steps, stopping once the
/// stationarity measure drops to `stop` or the iterates diverge.
pub fn run(
    rule: &mut UpdateRule,
    problem: &Problem,
    start: &JointPoint,
    n_iters: usize,
    stop: Option<f64>,
) -> Result<Trajectory> {
    if n_iters == 0 {
        return Err(RidgeError::Config("n_iters must be at least 1".into()));
    }
    let (n, m) = problem.dims();
    if (start.n(), start.m()) != (n, m) {
        return Err(RidgeError::Shape(format!(
            "start has shape ({}, {}) but {} needs ({n}, {m})",
            start.n(),
            start.m(),
            problem.id()
        )));
    }
    rule.reset();
    let mut traj = Trajectory {
        rule: rule.id().to_string(),
        problem: problem.id(),
        points: vec![start.clone()],
        grad_norms: vec![problem.stationarity(start)],
        aux: Vec::new(),
        diverged: false,
        stopped_early: false,
        failure: None,
    };
    let mut z = start.clone();
    for _ in 0..n_iters {
        match rule.step(problem, &z) {
            Ok((next, aux)) => {
                if !next.is_finite() || next.norm() > DIVERGENCE_NORM {
                    traj.diverged = true;
                    break;
                }
                let gn = problem.stationarity(&next);
                traj.points.push(next.clone());
                traj.grad_norms.push(gn);
                traj.aux.push(aux);
                z = next;
                if !gn.is_finite() {
                    traj.diverged = true;
                    break;
                }
                if stop.is_some_and(|s| gn <= s) {
                    traj.stopped_early = true;
                    break;
                }
            }
            Err(RidgeError::Overflow(msg)) => {
                traj.diverged = true;
                traj.failure = Some(msg);
                break;
            }
            Err(e) => {
                traj.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(traj)
}
