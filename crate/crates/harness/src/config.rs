use std::path::Path;

use ridge_core::optimizers::{Hyper, RuleKind, UpdateRule};
use ridge_core::JointPoint;
use serde::{Deserialize, Serialize};

use crate::builtins;
use crate::error::{suggestions, HarnessError, Result};

/// Where a run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartSpec {
    /// The problem's own default start.
    Default,
    Point(JointPoint),
    /// Uniform in `[-scale, scale]` per coordinate, drawn from `rng_seed`.
    Random {
        scale: f64,
    },
}

/// One rule with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    pub rule: String,
    #[serde(default)]
    pub hyper: Hyper,
}

impl RunSpec {
    pub fn new(label: impl Into<String>, rule: impl Into<String>, hyper: Hyper) -> Self {
        Self { label: label.into(), rule: rule.into(), hyper }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub trajectory: bool,
    pub report: bool,
    pub spectrum: bool,
    pub path: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { trajectory: true, report: true, spectrum: false, path: false }
    }
}

/// A declarative experiment: one problem, one start, one or more rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Catalog id; `{seed}` is replaced by `rng_seed`.
    pub problem: String,
    pub runs: Vec<RunSpec>,
    #[serde(default = "default_start")]
    pub start: StartSpec,
    /// Required; kept optional so that a missing value is a config error
    /// rather than a parse failure.
    #[serde(default)]
    pub n_iters: Option<usize>,
    /// Stop once the stationarity measure drops to this value.
    #[serde(default)]
    pub stop: Option<f64>,
    /// Reference point for distances; defaults to the problem's target.
    #[serde(default)]
    pub target: Option<JointPoint>,
    /// Distance counted as "reached" for iterations-to-threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub rng_seed: u64,
    /// Keep every `csv_stride`-th row of the trajectory CSV (the last row is
    /// always kept).
    #[serde(default = "default_stride")]
    pub csv_stride: usize,
    /// Classify the final iterate (second-order test) in the report.
    #[serde(default = "default_true")]
    pub classify_endpoint: bool,
}

fn default_start() -> StartSpec {
    StartSpec::Default
}

fn default_threshold() -> f64 {
    1e-6
}

fn default_stride() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, problem: impl Into<String>, n_iters: usize) -> Self {
        Self {
            name: name.into(),
            problem: problem.into(),
            runs: Vec::new(),
            start: StartSpec::Default,
            n_iters: Some(n_iters),
            stop: None,
            target: None,
            threshold: default_threshold(),
            outputs: Outputs::default(),
            rng_seed: 0,
            csv_stride: 1,
            classify_endpoint: true,
        }
    }

    pub fn with_run(mut self, run: RunSpec) -> Self {
        self.runs.push(run);
        self
    }

    pub fn problem_id(&self) -> String {
        self.problem.replace("{seed}", &self.rng_seed.to_string())
    }

    /// Checks everything that can be checked without building the problem.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        match self.n_iters {
            None => return cfg(format!("`{}`: n_iters is required", self.name)),
            Some(0) => return cfg(format!("`{}`: n_iters must be at least 1", self.name)),
            Some(_) => {}
        }
        if self.runs.is_empty() {
            return cfg(format!("`{}`: no runs configured", self.name));
        }
        if self.csv_stride == 0 {
            return cfg("csv_stride must be at least 1".into());
        }
        if !(self.threshold > 0.0) {
            return cfg("threshold must be positive".into());
        }
        if let Some(s) = self.stop {
            if !(s >= 0.0) {
                return cfg("stop must be non-negative".into());
            }
        }
        if let StartSpec::Random { scale } = self.start {
            if !(scale.is_finite() && scale >= 0.0) {
                return cfg("random start needs a finite non-negative scale".into());
            }
        }
        let mut labels: Vec<&str> = self.runs.iter().map(|r| r.label.as_str()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return cfg(format!("`{}`: run labels must be unique", self.name));
        }
        for r in &self.runs {
            if r.label.is_empty() || r.label.contains(['/', '\\']) || r.label.starts_with('.') {
                return cfg(format!("bad run label `{}`", r.label));
            }
            rule_kind(&r.rule)?;
            UpdateRule::from_id(&r.rule, r.hyper.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("cannot parse config: {e}")))
    }
}

/// Resolves a rule id with a suggestion list on failure.
pub fn rule_kind(id: &str) -> Result<RuleKind> {
    id.parse::<RuleKind>().map_err(|_| {
        let known: Vec<&str> = RuleKind::ALL.iter().map(|k| k.id()).collect();
        HarnessError::Config(format!("unknown rule `{id}`; did you mean one of: {}", suggestions(id, known).join(", ")))
    })
}

/// Loads a config file, or a builtin when `arg` is not an existing path.
pub fn load(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        return ExperimentConfig::from_json(&text);
    }
    builtins::builtin(arg)
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub rule: Option<String>,
    pub eta_x: Option<f64>,
    pub eta_y: Option<f64>,
    pub gamma: Option<f64>,
}

impl Overrides {
    /// `rule` keeps only the runs using that rule; when none does, the first
    /// run is switched to it.
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(n) = self.iters {
            cfg.n_iters = Some(n);
        }
        if let Some(rule) = &self.rule {
            rule_kind(rule)?;
            let kept: Vec<RunSpec> = cfg.runs.iter().filter(|r| &r.rule == rule).cloned().collect();
            cfg.runs = if kept.is_empty() {
                let base = cfg.runs.first().map(|r| r.hyper.clone()).unwrap_or_default();
                vec![RunSpec::new(rule.clone(), rule.clone(), base)]
            } else {
                kept
            };
        }
        for r in &mut cfg.runs {
            if let Some(v) = self.eta_x {
                r.hyper.eta_x = v;
            }
            if let Some(v) = self.eta_y {
                r.hyper.eta_y = v;
            }
            if let Some(v) = self.gamma {
                r.hyper.gamma = v;
            }
        }
        Ok(cfg)
    }
}
