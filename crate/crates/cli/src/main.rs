use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sklidar_cli::commands::{self, Globals, Run};
use sklidar_cli::config::Config;

#[derive(Parser)]
#[command(name = "sklidar", version, about = "Sketched single-photon lidar tools")]
struct Cli {
    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo loops (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs (overrides the config)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as --key value pairs
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a photon stream or a cube
    Simulate(Common),
    /// Sketch a stream or every pixel of a cube
    Sketch(Common),
    /// Estimate depths from sketches, streams or cubes
    Fit(Common),
    /// Information loss curves from Fisher information
    Rep(Common),
    /// Monte-Carlo RMSE and detection grids
    Contour(Common),
    /// Photon-starved RMSE ratio against matched filtering
    Starved(Common),
    /// RMSE ratio against the low-pass iFFT readout
    IfftCompare(Common),
    /// Circular-mean error spread against its Gaussian limit
    Clt(Common),
    /// Narrow-pulse sketch against coarse binning at two pulse widths
    Pulsewidth(Common),
}

fn load(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.apply_overrides(&common.overrides)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    let globals = Globals {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    let (common, action): (&Common, fn(&Run) -> Result<()>) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Sketch(c) => (c, commands::sketch),
        Command::Fit(c) => (c, commands::fit),
        Command::Rep(c) => (c, commands::rep),
        Command::Contour(c) => (c, commands::contour),
        Command::Starved(c) => (c, commands::starved),
        Command::IfftCompare(c) => (c, commands::ifft_compare),
        Command::Clt(c) => (c, commands::clt),
        Command::Pulsewidth(c) => (c, commands::pulse_width),
    };
    let run = Run::new(load(common)?, &globals)?;
    action(&run)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
