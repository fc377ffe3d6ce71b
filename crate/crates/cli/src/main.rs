//! `sps`: simulate, analyze and report on triggered single-photon sources.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sps_core::ErrorKind;

/// Exit statuses, one per failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const FIT: u8 = 5;
    pub const DOMAIN: u8 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "sps", version, about = "Triggered single-photon source toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: config `output_dir`, else `sps-out`].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an emission stream and detector records.
    Simulate {
        /// Overrides `excitation.n_pulses`.
        #[arg(long)]
        pulses: Option<u64>,
        /// Overrides `excitation.pump_power_uw`.
        #[arg(long)]
        pump: Option<f64>,
    },
    /// Analyze a records, histogram, spectrum or stream CSV (detected by header).
    Analyze {
        input: PathBuf,
    },
    /// Power sweep: simulate and analyze each power, fit saturation, add cavity figures.
    Pipeline {
        /// Comma-separated pump powers in µW; overrides `pipeline.powers_uw`.
        #[arg(long, value_delimiter = ',')]
        powers: Option<Vec<f64>>,
        /// Overrides `excitation.n_pulses` per power.
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// Mode waist, divergence, lens collection and optional far field.
    Optics {
        /// Near-field grid (CSV or binary); overrides `optics.near_field`.
        #[arg(long)]
        near_field: Option<PathBuf>,
    },
    /// Verify a run directory against its manifest and summarize it.
    Report {
        /// Run directory [default: the output directory].
        dir: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sps_core::Error>().map(sps_core::Error::kind) {
        Some(ErrorKind::Config) => exit::CONFIG,
        Some(ErrorKind::Io) => exit::IO,
        Some(ErrorKind::Fit) => exit::FIT,
        Some(ErrorKind::Domain) => exit::DOMAIN,
        None => exit::OTHER,
    }
}

fn kind_label(code: u8) -> &'static str {
    match code {
        exit::CONFIG => "config",
        exit::IO => "io",
        exit::FIT => "fit",
        exit::DOMAIN => "domain",
        _ => "other",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error[usage]: --threads must be at least 1");
            return ExitCode::from(exit::USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[other]: thread pool: {e}");
            return ExitCode::from(exit::OTHER);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error[{}]: {e}", kind_label(code));
            ExitCode::from(code)
        }
    }
}
