//! Named experiments.

use ridge_core::optimizers::{Hyper, Precond};
use ridge_core::solvers::CgConfig;
use ridge_core::JointPoint;

use crate::config::{ExperimentConfig, Outputs, RunSpec};
use crate::error::{suggestions, HarnessError, Result};

pub const BUILTINS: &[&str] =
    &["fig3-g1", "fig3-g2", "fig3-g3", "sec3-quad", "e2-momentum", "mog-desk", "mog-full", "e1-precond-ablation"];

pub const FIG3_RULES: [&str; 6] = ["gda", "ogda", "eg", "sga", "co", "fr"];

pub const E2_ETA_Y: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 1.6];
pub const E2_RATIO: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];
pub const E2_GAMMA: [f64; 9] = [0.0, 0.1, -0.1, 0.2, -0.2, 0.4, -0.4, 0.8, -0.8];
pub const E2_FR_GAMMA: [f64; 3] = [0.0, 0.5, 0.8];

/// Learning rate of both players in the MoG runs (RMSprop-scaled steps).
pub const MOG_ETA: f64 = 0.003;

/// CG iterations per FR-cg correction in the desk-scale MoG runs.
pub const MOG_CG_ITERS: usize = 20;

pub fn builtin(name: &str) -> Result<ExperimentConfig> {
    match name {
        "fig3-g1" => Ok(fig3("g1")),
        "fig3-g2" => Ok(fig3("g2")),
        "fig3-g3" => Ok(fig3("g3")),
        "sec3-quad" => Ok(sec3()),
        "e2-momentum" => Ok(e2_momentum()),
        "mog-desk" => Ok(mog_desk()),
        "mog-full" => Ok(mog_full()),
        "e1-precond-ablation" => Ok(precond_ablation()),
        _ => Err(HarnessError::Config(format!(
            "`{name}` is neither a config file nor a builtin; did you mean one of: {}",
            suggestions(name, BUILTINS.iter().copied()).join(", ")
        ))),
    }
}

fn fig3(problem: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(format!("fig3-{problem}"), problem, 5000);
    cfg.stop = Some(1e-8);
    cfg.target = Some(JointPoint::zeros(1, 1));
    for rule in FIG3_RULES {
        cfg.runs.push(RunSpec::new(rule, rule, Hyper::uniform(0.05)));
    }
    cfg
}

fn sec3() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("sec3-quad", "quad-sec3", 500);
    cfg.target = Some(JointPoint::zeros(1, 1));
    cfg.outputs.spectrum = true;
    cfg.runs.push(RunSpec::new("gda", "gda", Hyper::uniform(0.1)));
    cfg.runs.push(RunSpec::new("fr", "fr", Hyper::uniform(0.1)));
    cfg
}

pub fn e2_gda_label(eta_y: f64, ratio: f64, gamma: f64) -> String {
    format!("gda-ey{eta_y}-c{ratio}-g{gamma}")
}

pub fn e2_fr_label(gamma: f64) -> String {
    format!("fr-g{gamma}")
}

fn e2_momentum() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("e2-momentum", "quad-e2", 5000);
    cfg.stop = Some(1e-10);
    cfg.csv_stride = 10;
    cfg.classify_endpoint = false;
    for g in E2_FR_GAMMA {
        cfg.runs.push(RunSpec::new(e2_fr_label(g), "fr-mom", Hyper::uniform(0.2).with_gamma(g)));
    }
    for eta_y in E2_ETA_Y {
        for c in E2_RATIO {
            for g in E2_GAMMA {
                let h = Hyper::new(eta_y / c, eta_y).with_gamma(g);
                cfg.runs.push(RunSpec::new(e2_gda_label(eta_y, c, g), "gda", h));
            }
        }
    }
    cfg
}

fn mog_hyper(eta: f64, cg_iters: usize, precond: Precond) -> Hyper {
    Hyper { precond, cg: CgConfig { max_iters: cg_iters, tol: 1e-10 }, ..Hyper::uniform(eta) }
}

fn mog_outputs() -> Outputs {
    Outputs { trajectory: true, report: true, spectrum: false, path: true }
}

fn mog_desk() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("mog-desk", "mog-gan:500:16:8:{seed}", 5000);
    cfg.csv_stride = 50;
    cfg.outputs = mog_outputs();
    cfg.runs.push(RunSpec::new("fr-cg", "fr-cg", mog_hyper(MOG_ETA, MOG_CG_ITERS, Precond::rmsprop())));
    cfg.runs.push(RunSpec::new("gda", "gda", mog_hyper(MOG_ETA, MOG_CG_ITERS, Precond::rmsprop())));
    cfg
}

fn mog_full() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("mog-full", "mog-gan:5000:64:16:{seed}", 100_000);
    cfg.csv_stride = 500;
    cfg.outputs = mog_outputs();
    cfg.outputs.path = false;
    cfg.classify_endpoint = false;
    cfg.runs.push(RunSpec::new("fr-cg", "fr-cg", mog_hyper(0.0002, 10, Precond::rmsprop())));
    cfg.runs.push(RunSpec::new("gda", "gda", mog_hyper(0.0002, 10, Precond::rmsprop())));
    cfg
}

fn precond_ablation() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("e1-precond-ablation", "mog-gan:500:16:8:{seed}", 5000);
    cfg.csv_stride = 50;
    cfg.outputs = mog_outputs();
    cfg.outputs.path = false;
    cfg.runs.push(RunSpec::new("fr-cg-rmsprop", "fr-cg", mog_hyper(MOG_ETA, MOG_CG_ITERS, Precond::rmsprop())));
    cfg.runs.push(RunSpec::new("fr-cg-plain", "fr-cg", mog_hyper(0.05, MOG_CG_ITERS, Precond::Identity)));
    cfg
}
