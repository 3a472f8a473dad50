//! `yamabe-lab`: solitons, ancient runs, curvature post-processing and the
//! acceptance suite from the command line.
//!
//! Exit codes: 0 success, 1 a checked law failed, 2 usage or configuration
//! error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "yamabe-lab", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// experiment configuration (TOML); built-in defaults when absent
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// output directory, overriding the configured one
    #[arg(long, global = true, value_name = "DIR", env = "YAMABE_LAB_OUT")]
    pub out: Option<PathBuf>,
    /// worker threads for independent runs
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// machine-readable output on stdout
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Traveling-wave profiles with tail fits.
    Soliton {
        /// speeds to compute, overriding `soliton_lambdas`
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
    },
    /// The u_m family started from the merged supersolution at tau = -m.
    Ancient {
        /// start magnitudes, overriding `m_list`
        #[arg(long, value_delimiter = ',')]
        m: Vec<f64>,
    },
    /// The acceptance suite.
    Verify {
        /// multiplies every tolerance band; 0 makes every band degenerate
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        /// criteria to run, all by default
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
    /// Curvature profiles and the |Rm| monitor of an emitted trajectory.
    Curvature {
        /// long-format CSV with columns tau, x, u
        #[arg(long, value_name = "PATH")]
        run: PathBuf,
    },
    /// Analytic tail and merge rates with the profile-level fits.
    Rates,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Soliton { lambda } => commands::soliton(&cli.global, &lambda),
        Command::Ancient { m } => commands::ancient(&cli.global, &m),
        Command::Verify {
            tolerance_scale,
            criteria,
        } => commands::verify(&cli.global, tolerance_scale, &criteria),
        Command::Curvature { run } => commands::curvature(&cli.global, &run),
        Command::Rates => commands::rates(&cli.global),
    };
    match outcome {
        Ok(commands::Status::Passed) => ExitCode::SUCCESS,
        Ok(commands::Status::LawFailed) => ExitCode::from(1),
        Err(f) => {
            eprintln!("yamabe-lab: {f}");
            ExitCode::from(f.code())
        }
    }
}
