//! `qkdsim`: run scenarios, summarize run logs, calibrate the link model and
//! run the ledger transport demo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use qkdsim_core::chain::{demo_transaction, propagate, ChainError, PropagateConfig};
use qkdsim_core::phys::{
    calibrate, parse_anchors, parse_params, write_params, CalibrationError, CalibrationOptions,
};
use qkdsim_core::scenario::{report, run, ReportKind, RunLog, RunOptions, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "qkdsim", version, about = "QKD-over-DWDM link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV run log.
    Run {
        scenario: PathBuf,
        /// Model parameters; defaults to the scenario's params_file.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a run log.
    Report {
        log: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: ReportKind,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Fit model parameters to measured anchors.
    Calibrate {
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate one transaction to validators over QKD-keyed links.
    ChainDemo {
        /// Number of validators.
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        k: usize,
        /// Share index to corrupt in transit, or `none`.
        #[arg(long, default_value = "none", value_parser = parse_tamper)]
        tamper: Tamper,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated validator indices that stay offline.
        #[arg(long, value_delimiter = ',')]
        offline: Vec<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy)]
struct Tamper(Option<u32>);

fn parse_kind(s: &str) -> Result<ReportKind, String> {
    ReportKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = ReportKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown report kind {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_tamper(s: &str) -> Result<Tamper, String> {
    if s == "none" {
        return Ok(Tamper(None));
    }
    s.parse().map(|i| Tamper(Some(i))).map_err(|_| format!("expected a share index or `none`, got {s:?}"))
}

/// Failure classes, each with its own exit status.
enum Failure {
    Validation(anyhow::Error),
    Calibration(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Calibration(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Calibration(e) | Failure::Other(e) => e,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Parse(_) | ScenarioError::Invalid(_) => Failure::Validation(e.into()),
            ScenarioError::Io(_) | ScenarioError::Runtime(_) => Failure::Other(e.into()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Other)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Other)
}

fn cmd_run(scenario_path: &Path, params: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let (scenario, scenario_params) = Scenario::load(scenario_path).map_err(|e| match e {
        ScenarioError::Io(io) => Failure::Other(anyhow!(io).context(format!("reading {}", scenario_path.display()))),
        other => other.into(),
    })?;
    let params_path = params.map(Path::to_path_buf).or(scenario_params).ok_or_else(|| {
        Failure::Validation(anyhow!("no --params given and the scenario names no params_file"))
    })?;
    let params = parse_params(&read(&params_path)?)
        .with_context(|| format!("parsing {}", params_path.display()))
        .map_err(Failure::Validation)?;
    let log = run(&scenario, &params, &RunOptions { seed, ..Default::default() })?;
    write(out, &log.to_csv())?;
    println!("{}: {} rows -> {}", scenario.name, log.rows.len(), out.display());
    Ok(())
}

fn cmd_report(log_path: &Path, kind: ReportKind, format: Format) -> Result<(), Failure> {
    let log = RunLog::from_csv(&read(log_path)?)
        .with_context(|| format!("parsing {}", log_path.display()))
        .map_err(Failure::Validation)?;
    let table = report(&log, kind).map_err(|e| Failure::Validation(e.into()))?;
    match format {
        Format::Text => print!("{table}"),
        Format::Csv => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn cmd_calibrate(anchors_path: &Path, out: &Path) -> Result<(), Failure> {
    let anchors = parse_anchors(&read(anchors_path)?)
        .with_context(|| format!("parsing {}", anchors_path.display()))
        .map_err(Failure::Validation)?;
    let fit = calibrate(&anchors.skr, &anchors.qber, &CalibrationOptions::default()).map_err(|e| match e {
        CalibrationError::InvalidAnchor(_) => Failure::Validation(e.into()),
        CalibrationError::UnderDetermined { .. } | CalibrationError::Infeasible(_) => Failure::Calibration(e.into()),
    })?;
    write(out, &write_params(&fit.params))?;
    for (a, err) in anchors.skr.iter().zip(&fit.skr_relative_errors) {
        println!(
            "skr  {:>5} km {:>2} ch  measured {:>8}  relative error {:+.4}",
            a.distance_km,
            a.plan.channels.len(),
            a.skr_bps,
            err
        );
    }
    for (a, err) in anchors.qber.iter().zip(&fit.qber_errors) {
        println!(
            "qber {:>5} km {:>2} ch  measured {:>8}  absolute error {:+.2e}",
            a.distance_km,
            a.plan.channels.len(),
            a.qber,
            err
        );
    }
    println!("params -> {}", out.display());
    Ok(())
}

fn cmd_chain(nodes: usize, k: usize, tamper: Tamper, seed: u64, offline: Vec<u32>) -> Result<(), Failure> {
    let cfg = PropagateConfig {
        validators: nodes,
        k,
        tamper: tamper.0,
        offline,
        seed,
    };
    let result = propagate(&demo_transaction(seed), &cfg).map_err(|e| match e {
        ChainError::InvalidArgument(_) | ChainError::Shamir(_) => Failure::Validation(e.into()),
        other => Failure::Other(other.into()),
    })?;
    for line in &result.transcript {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            params,
            out,
            seed,
        } => cmd_run(&scenario, params.as_deref(), &out, seed),
        Command::Report { log, kind, format } => cmd_report(&log, kind, format),
        Command::Calibrate { anchors, out } => cmd_calibrate(&anchors, &out),
        Command::ChainDemo {
            nodes,
            k,
            tamper,
            seed,
            offline,
        } => cmd_chain(nodes, k, tamper, seed, offline),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
