//! Command-line front end: path fitting, gain design, simulation and paired
//! CACC/ACC comparisons. Every command writes its artifacts to disk and maps
//! failures onto a fixed set of exit codes.

pub mod commands;
pub mod specs;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: malformed files, invalid scenarios, bad flag values.
    #[error("{0}")]
    Validation(String),
    /// The computation itself failed, e.g. a diverging simulation.
    #[error("{0}")]
    Runtime(String),
    /// Gain design found no feasible cell.
    #[error("{0}")]
    NoFeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::NoFeasible(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "shuttle", version, about = "Path fitting, gain design and simulation for low-speed shuttles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit piecewise cubics to a waypoint CSV.
    FitPath(FitPathArgs),
    /// Grid the (k_p, k_d) plane and pick steering gains.
    DesignGains(DesignGainsArgs),
    /// Run a scenario and write the trajectory log.
    Simulate(SimulateArgs),
    /// Run a car-following scenario with and without V2V.
    CompareCacc(CompareCaccArgs),
}

#[derive(Debug, Args)]
pub struct FitPathArgs {
    /// Waypoint CSV with an `x,y` or `lat,lon` header.
    #[arg(long)]
    pub waypoints: PathBuf,
    /// Waypoints per fitted segment.
    #[arg(long, default_value_t = shuttle_core::path::DEFAULT_POINTS_PER_SEGMENT)]
    pub segment_size: usize,
    /// Route JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG of waypoints against the fitted curve.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignGainsArgs {
    /// Preset name (`fusion`, `dash`) or a vehicle parameter JSON file.
    #[arg(long)]
    pub vehicle: String,
    /// Operating box, e.g. `m=1977.6:2300,vx=2:10,eta=0.5:1`. Omitted keys
    /// keep the preset's default range.
    #[arg(long = "box")]
    pub uncertainty: Option<String>,
    /// Pole region, e.g. `sigma=0.1,theta=60,omega=400` (theta in degrees).
    #[arg(long)]
    pub dregion: Option<String>,
    /// Cells per axis.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    /// Chosen gains JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG heat map of the feasible mask.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Optional CSV of the mask.
    #[arg(long)]
    pub mask_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replaces both the V2V and the localization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write speed, steering, tracking and map SVGs.
    #[arg(long)]
    pub plots: bool,
    /// Leave the timestamp out of JSON outputs.
    #[arg(long)]
    pub reproducible: bool,
}

#[derive(Debug, Args)]
pub struct CompareCaccArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Desired time gap for both runs, s.
    #[arg(long)]
    pub time_gap: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reproducible: bool,
}

/// Runs one command; returns the written artifact paths.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::FitPath(a) => commands::fit_path(&a),
        Command::DesignGains(a) => commands::design_gains(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::CompareCacc(a) => commands::compare_cacc(&a),
    }
}
