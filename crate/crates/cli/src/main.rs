mod config;
mod report;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::Parser;
use dsm_core::DsmError;

use config::Kind;
use report::{emit_table, RunReport, TableFormat};
use run::Context;

/// A problem with the configuration rather than the numerics.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "dsm", version, about = "Run regularized-flow experiments and check their bounds")]
struct Cli {
    kind: Kind,
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.json, table.md and CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Config override as a dotted path, e.g. `flow.epsilons=[0.1,0.01]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<DsmError>() {
            return match e {
                DsmError::DimensionMismatch { .. }
                | DsmError::InvalidParameter { .. }
                | DsmError::Missing(_)
                | DsmError::UnknownProblem(_)
                | DsmError::NotApplicable(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_NUMERICAL
}

fn write_outputs(dir: &Path, report: &mut RunReport, artifacts: Vec<report::Artifact>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in &artifacts {
        std::fs::write(dir.join(&a.name), &a.contents).with_context(|| format!("writing {}", a.name))?;
    }
    if report.runs.is_empty() {
        report.artifacts = artifacts.iter().map(|a| a.name.clone()).collect();
    }
    report.artifacts.push("table.md".into());
    report.artifacts.push("table.csv".into());
    std::fs::write(dir.join("table.md"), emit_table(report, TableFormat::Markdown))?;
    std::fs::write(dir.join("table.csv"), emit_table(report, TableFormat::Csv))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}

fn print_checks(report: &RunReport, prefix: &str) {
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{prefix}{verdict} {}: {} (lhs {:.6e}, rhs {:.6e})", c.id, c.relation, c.lhs, c.rhs);
    }
    for (i, sub) in report.runs.iter().enumerate() {
        print_checks(sub, &format!("{prefix}run {i} {}: ", sub.kind));
    }
}

fn execute(cli: &Cli) -> Result<RunReport> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    let base_dir = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let started = Instant::now();
    let (mut report, artifacts) = run::run_experiment(cli.kind, &cfg, &Context { base_dir })?;
    eprintln!("dsm {}: finished in {:.3} s", cli.kind, started.elapsed().as_secs_f64());
    match &cli.out {
        Some(dir) => {
            write_outputs(dir, &mut report, artifacts)?;
            print_checks(&report, "");
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) if report.all_passed => ExitCode::SUCCESS,
        Ok(report) => {
            eprintln!("failed checks: {}", report.failed_checks().join(", "));
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
