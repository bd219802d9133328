//! `dera`: simulate, analyze and calibrate the der_a model from files.

mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dera_core::model::MeasurementSet;
use dera_core::Error;

#[derive(Debug, Parser)]
#[command(name = "dera", version, about = "der_a simulation, observability analysis and calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize noisy measurements and the noise-free truth.
    Simulate(SimulateArgs),
    /// Observability rank, spectrum, weights and estimable subset.
    Observe(ObserveArgs),
    /// Joint state and parameter estimation from a measurement file.
    Calibrate(CalibrateArgs),
    /// P and Q from two parameter sets against a measurement file.
    Compare(CompareArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ObserveArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_set)]
    pub measurement_set: Option<MeasurementSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterChoice {
    Ekf,
    Ukf,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JacobianChoice {
    Ad,
    Analytic,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    /// Inputs, fixed parameters and the starting values of the estimated ones.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum, default_value = "ekf")]
    pub filter: FilterChoice,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_set)]
    pub measurement_set: Option<MeasurementSet>,
    /// Passes over the record; 1 runs the filter once.
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long, value_enum, default_value = "ad")]
    pub jacobian: JacobianChoice,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Flat `key = value` parameter file laid over the scenario parameters.
    #[arg(long)]
    pub calibrated: PathBuf,
    #[arg(long)]
    pub guideline: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_set(s: &str) -> Result<MeasurementSet, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 4,
        Error::InvalidArgument(_) | Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse_from(std::iter::once("dera".to_string()).chain(raw.iter().cloned())) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let overrides: BTreeMap<String, String> = config::env_overrides();
    match commands::run(cli.command, raw, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
