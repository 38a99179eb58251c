use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ridge_core::analysis::{self, Tolerances};
use ridge_core::diff::dynamics_jacobian;
use ridge_core::optimizers::{Hyper, UpdateRule};
use ridge_core::problems::{by_id, Problem};
use ridge_core::vecspace::general_eigenvalues;
use ridge_core::JointPoint;
use ridge_harness::{config, csv, exit, exit_code, run_experiment, HarnessError, Overrides, Result};

#[derive(Parser)]
#[command(name = "ridge", version, about = "Follow-the-Ridge experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or builtin experiment and write its artifacts.
    Run {
        /// Path to a JSON config, or a builtin name.
        config: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        rule: Option<String>,
        #[command(flatten)]
        rates: Rates,
    },
    /// Run several configs and print one summary row per run.
    Compare {
        #[arg(required = true)]
        configs: Vec<String>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Second-order classification of a point, as JSON.
    Classify {
        problem: String,
        /// `x0,x1;y0,y1`, or `start` / `target`.
        point: String,
    },
    /// Eigenvalues of a rule's update-map Jacobian at a point, as CSV.
    Spectrum {
        problem: String,
        rule: String,
        point: String,
        #[command(flatten)]
        rates: Rates,
    },
    /// Print a builtin config as JSON.
    Show { name: String },
}

#[derive(Args, Clone, Default)]
struct Rates {
    #[arg(long)]
    eta_x: Option<f64>,
    #[arg(long)]
    eta_y: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

fn parse_point(problem: &Problem, text: &str) -> Result<JointPoint> {
    let z = match text {
        "start" => problem.default_start(),
        "target" => {
            problem.target().ok_or_else(|| HarnessError::Config(format!("{} has no known target", problem.id())))?
        }
        _ => {
            let (xs, ys) = text
                .split_once(';')
                .ok_or_else(|| HarnessError::Config(format!("point `{text}` should look like `x0,x1;y0,y1`")))?;
            let parse = |s: &str| -> Result<Vec<f64>> {
                s.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| HarnessError::Config(format!("bad number `{v}`"))))
                    .collect()
            };
            JointPoint::new(parse(xs)?, parse(ys)?)
        }
    };
    if (z.n(), z.m()) != problem.dims() {
        let (n, m) = problem.dims();
        return Err(HarnessError::Config(format!("{} expects a point with {n} + {m} coordinates", problem.id())));
    }
    Ok(z)
}

fn classify(problem: &str, point: &str) -> Result<()> {
    let p = by_id(problem)?;
    let z = parse_point(&p, point)?;
    let report = analysis::classify(&p, &z, &Tolerances::default())?;
    println!("{}", report.to_json());
    Ok(())
}

fn spectrum(problem: &str, rule: &str, point: &str, rates: &Rates) -> Result<()> {
    let p = by_id(problem)?;
    let z = parse_point(&p, point)?;
    config::rule_kind(rule)?;
    let mut h = Hyper::default();
    h.eta_x = rates.eta_x.unwrap_or(h.eta_x);
    h.eta_y = rates.eta_y.unwrap_or(h.eta_y);
    h.gamma = rates.gamma.unwrap_or(h.gamma);
    let rule = UpdateRule::from_id(rule, h)?;
    let step = rule.direction(&p, &z)?.norm();
    if step > analysis::FIXED_POINT_TOL {
        log::warn!("point is not a fixed point of {} (step norm {step:e})", rule.id());
    }
    let s = general_eigenvalues(&dynamics_jacobian(&rule, &p, &z)?)?;
    print!("{}", csv::spectrum_csv(&s));
    eprintln!(
        "spectral radius {} ({})",
        csv::fmt_f64(s.spectral_radius),
        analysis::Stability::from_radius(s.spectral_radius).label()
    );
    Ok(())
}

fn report(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() { exit::CONFIG } else { exit::FAILURE } as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let done = |r: Result<()>| match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    };
    match cli.command {
        Command::Run { config: arg, out, seed, iters, rule, rates } => {
            let ov = Overrides { seed, iters, rule, eta_x: rates.eta_x, eta_y: rates.eta_y, gamma: rates.gamma };
            let result = config::load(&arg).and_then(|c| ov.apply(c)).and_then(|c| run_experiment(&c, &out));
            match &result {
                Ok(o) => {
                    for r in &o.records {
                        println!(
                            "{:<24} {:<10} iters {:>7}  grad {}",
                            r.spec.label,
                            r.summary.outcome.to_string(),
                            r.summary.iterations,
                            csv::fmt_f64(r.summary.final_grad_norm)
                        );
                    }
                    println!("artifacts in {}", o.dir.display());
                }
                Err(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&result) as u8)
        }
        Command::Compare { configs, out } => done((|| {
            let cfgs = configs.iter().map(|c| config::load(c)).collect::<Result<Vec<_>>>()?;
            let (_, table) = ridge_harness::compare_table(&cfgs)?;
            match out {
                Some(p) => csv::write_atomic(&p, table.as_bytes()),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        })()),
        Command::Classify { problem, point } => done(classify(&problem, &point)),
        Command::Spectrum { problem, rule, point, rates } => done(spectrum(&problem, &rule, &point, &rates)),
        Command::Show { name } => done(ridge_harness::builtins::builtin(&name).map(|c| println!("{}", c.to_json()))),
    }
}
