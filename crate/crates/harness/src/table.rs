use crate::config::ExperimentConfig;
use crate::csv::{fmt_f64, fmt_opt};
use crate::error::{HarnessError, Result};
use crate::runner::{execute, RunSummary};

pub const SUMMARY_HEADER: &str =
    "config,label,rule,problem,iterations,final_grad_norm,distance_to_target,iterations_to_threshold,rate_estimate,verdict,endpoint";

pub fn summary_row(s: &RunSummary) -> String {
    [
        s.config.clone(),
        s.label.clone(),
        s.rule.clone(),
        s.problem.clone(),
        s.iterations.to_string(),
        fmt_f64(s.final_grad_norm),
        fmt_opt(s.distance_to_target),
        s.iterations_to_threshold.map(|k| k.to_string()).unwrap_or_default(),
        fmt_opt(s.rate_estimate),
        s.outcome.to_string(),
        s.endpoint_verdict.map(|v| v.to_string()).unwrap_or_default(),
    ]
    .join(",")
}

pub fn summary_csv(rows: &[&RunSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&summary_row(r));
        out.push('\n');
    }
    out
}

/// Runs every config in memory and tabulates one row per run.
pub fn compare_table(configs: &[ExperimentConfig]) -> Result<(Vec<RunSummary>, String)> {
    if configs.is_empty() {
        return Err(HarnessError::Config("compare needs at least one config".into()));
    }
    let mut rows = Vec::new();
    for cfg in configs {
        rows.extend(execute(cfg)?.into_iter().map(|r| r.summary));
    }
    let refs: Vec<&RunSummary> = rows.iter().collect();
    let csv = summary_csv(&refs);
    Ok((rows, csv))
}
