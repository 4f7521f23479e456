use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fsdopt::harness::{self, RunConfig};
use fsdopt::Error;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(name = "fsdopt", version, about = "Portfolio optimization under first-order stochastic dominance constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a configured problem and print the JSON report.
    Solve {
        /// Config file, or `preset:<name>`.
        config: String,
        /// Write the report here instead of `output.report`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Omit wall time from the report.
        #[arg(long)]
        no_timing: bool,
    },
    /// Check dominance and box feasibility of a portfolio.
    Feasible {
        config: String,
        /// Comma-separated weights; defaults to `check.weights`, then the anchor.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Grid the residual over a two-asset problem.
    Scan {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Export portfolio and reference distribution functions as CSV.
    Profile {
        config: String,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Take the weights from a saved report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// List bundled experiment configs.
    Presets,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Parse a CSV dataset and print its shape.
    Validate { path: PathBuf },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse { .. }) => EXIT_IO,
        Some(_) => EXIT_INFEASIBLE,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_INFEASIBLE,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn chosen_weights(
    config: &RunConfig,
    problem: &harness::Problem,
    weights: Option<Vec<f64>>,
) -> anyhow::Result<Vec<f64>> {
    weights
        .or_else(|| config.check.as_ref().map(|c| c.weights.clone()))
        .or_else(|| problem.spec.anchor.clone())
        .ok_or_else(|| {
            anyhow::Error::new(Error::Config(
                "no weights given (use --weights, check.weights or penalty.anchor)".into(),
            ))
        })
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Solve {
            config,
            out,
            seed,
            no_timing,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output.report = Some(out);
            }
            if no_timing {
                cfg.output.include_timing = false;
            }
            let report = harness::run(&cfg)?;
            print!("{}", report.to_json()?);
            Ok(if !report.feasible {
                EXIT_INFEASIBLE
            } else if report.budget_exhausted {
                EXIT_BUDGET
            } else {
                0
            })
        }
        Command::Feasible { config, weights } => {
            let cfg = RunConfig::load(&config)?;
            let problem = cfg.problem()?;
            let x = chosen_weights(&cfg, &problem, weights)?;
            let assessment = problem.assess(&x)?;
            print_json(&assessment)?;
            Ok(if assessment.feasible { 0 } else { EXIT_INFEASIBLE })
        }
        Command::Scan {
            config,
            out,
            resolution,
        } => {
            let cfg = RunConfig::load(&config)?;
            let problem = cfg.problem()?;
            let result = harness::scan_feasible(
                &problem,
                resolution.unwrap_or(cfg.scan.resolution),
                cfg.scan.max_points,
            )?;
            if let Some(path) = out.or(cfg.output.scan.clone()) {
                harness::write_atomic(&path, harness::scan_csv(&result.points).as_bytes())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&result.summary)?;
            Ok(0)
        }
        Command::Profile {
            config,
            weights,
            report,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let problem = cfg.problem()?;
            let weights = match (weights, report) {
                (Some(w), _) => Some(w),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let r: harness::RunReport = serde_json::from_str(&text).map_err(Error::from)?;
                    Some(r.weights)
                }
                (None, None) => None,
            };
            let x = chosen_weights(&cfg, &problem, weights)?;
            let rows = harness::run::profile_rows(&problem.dataset.matrix, &x, &problem.reference)?;
            let text = harness::run::profile_csv(&rows);
            match out.or(cfg.output.profile.clone()) {
                Some(path) => harness::write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Dataset {
            command: DatasetCommand::Validate { path },
        } => {
            let d = harness::load_csv(&path)?;
            print_json(&d.summary())?;
            Ok(0)
        }
        Command::Presets => {
            for name in harness::presets::names() {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
