//! `zbspline` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a computational failure, 2 on a usage or
//! configuration error.

mod commands;
mod config;
mod stats;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::config::RunConfig;

/// Invalid invocation, configuration or input files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "zbspline",
    version,
    about = "Bivariate density estimation with ZB-spline smoothing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth one histogram in clr space and write coefficients and grids.
    Fit(CommonArgs),
    /// Split a fitted spline into its independent and interactive parts.
    Decompose(CommonArgs),
    /// Scan the smoothing parameter by generalized cross-validation.
    Gcv(CommonArgs),
    /// Sample from a bivariate beta density and run the ISE sweeps.
    Simulate(CommonArgs),
    /// Coefficient-wise mean and standard deviation over a group of fits.
    GroupStats(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample CSV files with two columns `x,y`.
    #[arg(long, num_args = 1..)]
    samples: Vec<PathBuf>,
    /// Histogram CSV files as written by `fit`.
    #[arg(long, num_args = 1..)]
    histograms: Vec<PathBuf>,
    /// ZB coefficient CSV files.
    #[arg(long, num_args = 1..)]
    coefficients: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed smoothing parameter; skips the GCV scan.
    #[arg(long, conflicts_with = "rho_grid")]
    rho: Option<f64>,
    /// Log-spaced scan grid `lo,hi,count`.
    #[arg(long, value_parser = parse_rho_grid)]
    rho_grid: Option<(f64, f64, usize)>,
    /// Histogram classes `m,n`.
    #[arg(long, value_parser = parse_pair)]
    bins: Option<[usize; 2]>,
    /// Equispaced interior knots `g,h`.
    #[arg(long, value_parser = parse_pair)]
    knots: Option<[usize; 2]>,
    /// Spline degrees `k,l`.
    #[arg(long, value_parser = parse_pair)]
    degrees: Option<[usize; 2]>,
    /// Penalized derivative orders `p,q`.
    #[arg(long, value_parser = parse_pair)]
    penalty: Option<[usize; 2]>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|_| format!("'{a}' is not a count"))?,
            b.parse().map_err(|_| format!("'{b}' is not a count"))?,
        ]),
        _ => Err(format!("expected two comma-separated values, got '{s}'")),
    }
}

fn parse_rho_grid(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lo, hi, n] => Ok((
            lo.parse().map_err(|_| format!("'{lo}' is not a number"))?,
            hi.parse().map_err(|_| format!("'{hi}' is not a number"))?,
            n.parse().map_err(|_| format!("'{n}' is not a count"))?,
        )),
        _ => Err(format!("expected lo,hi,count, got '{s}'")),
    }
}

impl CommonArgs {
    fn as_config(&self) -> RunConfig {
        let list = |v: &Vec<PathBuf>| (!v.is_empty()).then(|| v.clone());
        RunConfig {
            samples: list(&self.samples),
            histograms: list(&self.histograms),
            coefficients: list(&self.coefficients),
            seed: self.seed,
            rho: self.rho,
            rho_grid: self.rho_grid,
            bins: self.bins,
            knots: self.knots,
            degrees: self.degrees,
            penalty: self.penalty,
            out: self.out.clone(),
            ..Default::default()
        }
    }

    fn resolve(&self) -> Result<RunConfig, UsageError> {
        let mut base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        // a fixed rho on the command line wins over a grid in the file
        if self.rho.is_some() {
            base.rho_grid = None;
        }
        if self.rho_grid.is_some() {
            base.rho = None;
        }
        Ok(base.merged(self.as_config()))
    }
}

/// Usage errors and unreadable inputs exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<zbspline::Error>() {
            return match e {
                zbspline::Error::Io { .. }
                | zbspline::Error::Parse { .. }
                | zbspline::Error::Csv(_)
                | zbspline::Error::InvalidKnots(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, args, run_fn): (
        &str,
        &CommonArgs,
        fn(&RunConfig, &mut Run) -> anyhow::Result<()>,
    ) = match &cli.command {
        Command::Fit(a) => ("fit", a, commands::fit),
        Command::Decompose(a) => ("decompose", a, commands::decompose_cmd),
        Command::Gcv(a) => ("gcv", a, commands::gcv),
        Command::Simulate(a) => ("simulate", a, commands::simulate),
        Command::GroupStats(a) => ("group-stats", a, commands::group_stats),
    };
    let cfg = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut run = Run::new(name, cfg.out_dir());
    let result = run_fn(&cfg, &mut run);
    let message = result.as_ref().err().map(|e| format!("{e:#}"));
    if let Err(e) = run.manifest(&cfg, message.as_deref()) {
        eprintln!("warning: could not write manifest: {e:#}");
    }
    match result {
        Ok(()) => {
            log::info!(
                "{name}: wrote {} files to {}",
                run.files.len(),
                run.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
