use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridge_core::analysis::{self, default_alpha_grid, FixedPointReport, PathDiagnostic, Tolerances, Verdict};
use ridge_core::diff::dynamics_jacobian;
use ridge_core::optimizers::{run, Trajectory, UpdateRule};
use ridge_core::problems::{by_id, Problem};
use ridge_core::vecspace::general_eigenvalues;
use ridge_core::{JointPoint, RidgeError, Spectrum};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RunSpec, StartSpec};
use crate::csv;
use crate::error::{HarnessError, Result};

/// Growth of the distance to the target counted as divergence.
pub const DIVERGENCE_GROWTH: f64 = 10.0;

/// Half-width of the window around `α = 1` used for the path-angle bump.
pub const BUMP_HALFWIDTH: f64 = 0.05;

/// Qualitative outcome of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    Diverged,
    /// Bounded, non-monotone distance without convergence.
    Cycling,
    /// Bounded and monotone but short of the threshold.
    Stalled,
    /// The rule failed for a reason other than overflow.
    Failed,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Converged => "converged",
            Outcome::Diverged => "diverged",
            Outcome::Cycling => "cycling",
            Outcome::Stalled => "stalled",
            Outcome::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub sign_changes: usize,
    pub bump_height: f64,
}

/// Per-run numbers shared by the report and the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: String,
    pub label: String,
    pub rule: String,
    pub problem: String,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub initial_distance: Option<f64>,
    pub distance_to_target: Option<f64>,
    pub iterations_to_threshold: Option<usize>,
    pub rate_estimate: Option<f64>,
    pub outcome: Outcome,
    pub diverged: bool,
    pub stopped_early: bool,
    pub failure: Option<String>,
    pub endpoint_verdict: Option<Verdict>,
}

/// Everything one run produces in memory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub trajectory: Trajectory,
    pub summary: RunSummary,
    pub endpoint: Option<FixedPointReport>,
    pub endpoint_error: Option<String>,
    pub spectrum: Option<(JointPoint, Spectrum)>,
    pub path: Option<PathDiagnostic>,
}

#[derive(Debug, Clone, Serialize)]
struct RunReport<'a> {
    summary: &'a RunSummary,
    hyper: &'a ridge_core::optimizers::Hyper,
    start: &'a JointPoint,
    endpoint: Option<&'a FixedPointReport>,
    endpoint_error: Option<&'a str>,
    spectral_radius: Option<f64>,
    path: Option<PathSummary>,
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub label: String,
    pub trajectory: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub spectrum: Option<PathBuf>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub summary_csv: PathBuf,
    pub runs: Vec<RunArtifacts>,
    pub records: Vec<RunRecord>,
}

impl ExperimentOutput {
    pub fn any_diverged(&self) -> bool {
        self.records.iter().any(|r| r.summary.outcome == Outcome::Diverged)
    }

    pub fn record(&self, label: &str) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.spec.label == label)
    }
}

pub fn start_point(cfg: &ExperimentConfig, problem: &Problem) -> Result<JointPoint> {
    let (n, m) = problem.dims();
    let z = match &cfg.start {
        StartSpec::Default => problem.default_start(),
        StartSpec::Point(z) => z.clone(),
        StartSpec::Random { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let mut draw = |k: usize| -> Vec<f64> {
                (0..k).map(|_| if *scale > 0.0 { rng.random_range(-scale..*scale) } else { 0.0 }).collect()
            };
            let x = draw(n);
            JointPoint::new(x, draw(m))
        }
    };
    if (z.n(), z.m()) != (n, m) {
        return Err(HarnessError::Config(format!(
            "start has shape ({}, {}) but {} needs ({n}, {m})",
            z.n(),
            z.m(),
            problem.id()
        )));
    }
    Ok(z)
}

/// Outcome from the distance sequence (to the target, or to the origin of
/// the joint space when there is none).
pub fn outcome_of(traj: &Trajectory, distances: &[f64], stop: Option<f64>, threshold: f64) -> Outcome {
    let last = *distances.last().expect("non-empty");
    let first = distances[0];
    if traj.diverged || !last.is_finite() || last >= DIVERGENCE_GROWTH * first.max(f64::MIN_POSITIVE) {
        return Outcome::Diverged;
    }
    if traj.failure.is_some() {
        return Outcome::Failed;
    }
    let g = traj.final_grad_norm();
    if stop.is_some_and(|s| g <= s) || last <= threshold {
        return Outcome::Converged;
    }
    let tail = &distances[distances.len() / 2..];
    if tail.windows(2).all(|w| w[1] <= w[0]) {
        Outcome::Stalled
    } else {
        Outcome::Cycling
    }
}

/// Runs every rule of `cfg` without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let problem = by_id(&cfg.problem_id())?;
    let start = start_point(cfg, &problem)?;
    let target = cfg.target.clone().or_else(|| problem.target());
    if let Some(t) = &target {
        if (t.n(), t.m()) != problem.dims() {
            return Err(HarnessError::Config("target shape does not match the problem".into()));
        }
    }
    let mut out = Vec::with_capacity(cfg.runs.len());
    for spec in &cfg.runs {
        out.push(execute_run(cfg, &problem, &start, target.as_ref(), spec)?);
    }
    Ok(out)
}

fn execute_run(
    cfg: &ExperimentConfig,
    problem: &Problem,
    start: &JointPoint,
    target: Option<&JointPoint>,
    spec: &RunSpec,
) -> Result<RunRecord> {
    let mut rule = UpdateRule::from_id(&spec.rule, spec.hyper.clone())?;
    log::info!("{}: running {} for up to {} iterations", cfg.name, spec.label, cfg.n_iters.unwrap_or(0));
    let traj = match run(&mut rule, problem, start, cfg.n_iters.expect("validated"), cfg.stop) {
        Ok(t) => t,
        Err(RidgeError::Contract(msg)) => return Err(HarnessError::Config(format!("{}: {msg}", spec.label))),
        Err(e) => return Err(e.into()),
    };
    let origin = JointPoint::zeros(start.n(), start.m());
    let reference = target.unwrap_or(&origin);
    let distances = traj.distances_to(reference);
    let outcome = outcome_of(&traj, &distances, cfg.stop, cfg.threshold);

    let (endpoint, endpoint_error) = if cfg.classify_endpoint {
        match analysis::classify(problem, traj.last(), &Tolerances::default()) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };

    let spectrum = if cfg.outputs.spectrum {
        let at = target.cloned().unwrap_or_else(|| traj.last().clone());
        let jac = dynamics_jacobian(&rule, problem, &at)?;
        Some((at, general_eigenvalues(&jac)?))
    } else {
        None
    };

    let path = if cfg.outputs.path && start.distance(traj.last()) > 0.0 {
        let diag = rule.frozen().and_then(|frozen| {
            analysis::path_diagnostic(|z| frozen.direction(problem, z), start, traj.last(), &default_alpha_grid())
        });
        match diag {
            Ok(d) => Some(d),
            Err(e) => {
                log::warn!("{}: no path diagnostic: {e}", spec.label);
                None
            }
        }
    } else {
        None
    };

    let summary = RunSummary {
        config: cfg.name.clone(),
        label: spec.label.clone(),
        rule: spec.rule.clone(),
        problem: problem.id(),
        iterations: traj.iterations(),
        final_grad_norm: traj.final_grad_norm(),
        initial_distance: target.map(|_| distances[0]),
        distance_to_target: target.map(|_| *distances.last().expect("non-empty")),
        iterations_to_threshold: target.and_then(|t| traj.iterations_to(t, cfg.threshold)),
        rate_estimate: target.and_then(|t| analysis::estimate_rate(&traj, t).ok()),
        outcome,
        diverged: traj.diverged,
        stopped_early: traj.stopped_early,
        failure: traj.failure.clone(),
        endpoint_verdict: endpoint.as_ref().map(|r| r.verdict),
    };
    Ok(RunRecord { spec: spec.clone(), trajectory: traj, summary, endpoint, endpoint_error, spectrum, path })
}

/// Runs `cfg` and writes its artifacts under `out_dir/<name>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let records = execute(cfg)?;
    let dir = out_dir.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    csv::write_atomic(&dir.join("config.json"), cfg.to_json().as_bytes())?;
    let mut runs = Vec::with_capacity(records.len());
    for rec in &records {
        runs.push(write_run(cfg, &dir, rec)?);
    }
    let summary_csv = dir.join("summary.csv");
    let summaries: Vec<&RunSummary> = records.iter().map(|r| &r.summary).collect();
    csv::write_atomic(&summary_csv, crate::table::summary_csv(&summaries).as_bytes())?;
    Ok(ExperimentOutput { dir, summary_csv, runs, records })
}

fn write_run(cfg: &ExperimentConfig, dir: &Path, rec: &RunRecord) -> Result<RunArtifacts> {
    let run_dir = dir.join(&rec.spec.label);
    std::fs::create_dir_all(&run_dir).map_err(|e| HarnessError::io(&run_dir, e))?;
    let mut art =
        RunArtifacts { label: rec.spec.label.clone(), trajectory: None, report: None, spectrum: None, path: None };
    if cfg.outputs.trajectory {
        let p = run_dir.join("trajectory.csv");
        csv::write_atomic(&p, csv::trajectory_csv(&rec.trajectory, cfg.csv_stride).as_bytes())?;
        art.trajectory = Some(p);
    }
    if cfg.outputs.report {
        let report = RunReport {
            summary: &rec.summary,
            hyper: &rec.spec.hyper,
            start: &rec.trajectory.points[0],
            endpoint: rec.endpoint.as_ref(),
            endpoint_error: rec.endpoint_error.as_deref(),
            spectral_radius: rec.spectrum.as_ref().map(|(_, s)| s.spectral_radius),
            path: rec.path.as_ref().map(|d| PathSummary {
                sign_changes: d.sign_changes(),
                bump_height: d.bump_height(1.0, BUMP_HALFWIDTH),
            }),
        };
        let p = run_dir.join("report.json");
        csv::write_atomic(&p, serde_json::to_string_pretty(&report)?.as_bytes())?;
        art.report = Some(p);
    }
    if let Some((_, s)) = &rec.spectrum {
        let p = run_dir.join("spectrum.csv");
        csv::write_atomic(&p, csv::spectrum_csv(s).as_bytes())?;
        art.spectrum = Some(p);
    }
    if let Some(d) = &rec.path {
        let p = run_dir.join("path.csv");
        csv::write_atomic(&p, csv::path_csv(d).as_bytes())?;
        art.path = Some(p);
    }
    Ok(art)
}
