//! `segtrap`: field solves, sequence runs, fits and waveforms from one config.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use segtrap::report::ToleranceProfile;
use segtrap::Error;

#[derive(Parser, Debug)]
#[command(name = "segtrap", version, about = "Segmented microchip Paul trap simulator")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `output_dir` from the config, then `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Reference)]
    pub tolerance_profile: Profile,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve or load the basis fields and report trap figures.
    SolveFields {
        /// Grid spacing override, µm.
        #[arg(long)]
        spacing_um: Option<f64>,
    },
    /// Execute the configured experiment and write its record.
    Run {
        /// Spread shots serially instead of over the thread pool.
        #[arg(long)]
        serial: bool,
    },
    /// Fit a model to a record.
    Fit {
        #[arg(long)]
        record: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
        #[arg(long, default_value = "red")]
        red: String,
        #[arg(long, default_value = "blue")]
        blue: String,
        /// Lines the spectrum model should look for.
        #[arg(long, default_value_t = 11)]
        lines: usize,
    },
    /// Synthesise a shuttling waveform and, with `[compensation]`, a
    /// compensation scan.
    Waveform,
    /// Derived model parameters and, with `--fields`, trap figures.
    Report {
        #[arg(long)]
        fields: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FitModel {
    Exponential,
    Linear,
    Lorentzian,
    Spectrum,
    Thermometry,
    Heating,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Profile {
    Reference,
    Strict,
    Loose,
}

impl From<Profile> for ToleranceProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Reference => ToleranceProfile::Reference,
            Profile::Strict => ToleranceProfile::Strict,
            Profile::Loose => ToleranceProfile::Loose,
        }
    }
}

pub mod exit {
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const SOLVER: u8 = 4;
    pub const INFEASIBLE: u8 = 5;
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => exit::IO,
            Error::Parse { .. } | Error::InvalidInput(_) | Error::Sequence(_) => exit::CONFIG,
            Error::Infeasible(_) => exit::INFEASIBLE,
            _ => exit::SOLVER,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
