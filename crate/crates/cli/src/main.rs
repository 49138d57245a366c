use std::path::PathBuf;
use std::process::ExitCode;

use calib_cli::commands::{self, CalibrateArgs, EvaluateArgs, ExtractArgs, Preset, SimulateArgs};
use clap::{Parser, Subcommand};

/// LiDAR-camera extrinsic calibration from checkerboard frames.
///
/// Log level comes from the YOCO_LOG environment variable (e.g. `debug`);
/// `--verbose` forces debug output.
#[derive(Parser)]
#[command(name = "lidarcam-calib", version)]
struct Cli {
    /// Debug logging on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic frames with known ground truth.
    Simulate {
        /// Scene description (JSON); a preset is used when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Room)]
        preset: Preset,
        /// Number of board placements to sample [default: 3, or the scene's
        /// explicit poses when it lists any].
        #[arg(long, short = 'n')]
        frames: Option<usize>,
        /// Minimum angle between any two board normals, in degrees.
        #[arg(long, default_value_t = 30.0)]
        spread: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pull the board points out of one frame's LiDAR scan.
    Extract {
        frame: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Board cloud; diagnostics go to the same name with `.diagnostics.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the LiDAR→camera extrinsic from frame files.
    Calibrate {
        #[arg(required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Frames processed in parallel.
        #[arg(long)]
        jobs: Option<usize>,
        /// Result file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-frame PNGs of the scan projected into the image.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Compare a result file against ground truth and write a CSV row.
    Evaluate {
        result: PathBuf,
        ground_truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add a row to an existing CSV instead of replacing it.
        #[arg(long)]
        append: bool,
    },
}

fn init_logging(verbose: bool) {
    let env = env_logger::Env::new().filter_or("YOCO_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if verbose {
        builder.filter_level(log::LevelFilter::Debug);
    }
    builder.init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let outcome = match cli.command {
        Command::Simulate { scene, preset, frames, spread, seed, out } => {
            commands::simulate(&SimulateArgs { scene, preset, frames, spread_deg: spread, seed, out })
        }
        Command::Extract { frame, params, seed, jobs, out } => {
            commands::extract(&ExtractArgs { frame, params, seed, jobs, out })
        }
        Command::Calibrate { frames, params, seed, jobs, out, render } => {
            commands::calibrate(&CalibrateArgs { frames, params, seed, jobs, out, render })
        }
        Command::Evaluate { result, ground_truth, out, append } => {
            commands::evaluate(&EvaluateArgs { result, ground_truth, out, append })
        }
    };
    match outcome {
        Ok(o) => ExitCode::from(o.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
