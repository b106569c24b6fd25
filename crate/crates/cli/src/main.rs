mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nfsar::config::Algorithm;

/// Near-field SAR toolkit: simulate beat signals, reconstruct images,
/// analyse PSFs, and run multiband experiments.
#[derive(Debug, Parser)]
#[command(name = "nfsar", version)]
pub struct Cli {
    /// Worker threads for parallel kernels (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the beat cube of a configuration.
    Simulate(JobArgs),
    /// Reconstruct an image from a simulated or saved beat cube.
    Reconstruct {
        #[command(flatten)]
        job: JobArgs,
        /// Algorithm, overriding the configuration.
        #[arg(long, value_parser = parse_algorithm)]
        algo: Option<Algorithm>,
        /// Beat cube file to reconstruct instead of simulating.
        #[arg(long)]
        cube: Option<PathBuf>,
        /// Floor of the exported slice (dB below the peak).
        #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
        db_min: f64,
    },
    /// PSF of the multi-planar reconstruction over maximum plane offsets.
    Psf {
        #[command(flatten)]
        job: JobArgs,
        /// Comma-separated maximum plane offsets (e.g. `0,5cm,0.1`).
        #[arg(long, value_delimiter = ',', value_parser = parse_length)]
        dzmax: Vec<f64>,
    },
    /// Multiband signal experiments.
    Multiband {
        #[command(subcommand)]
        command: MultibandCommand,
    },
    /// Compare an image against a reference.
    Evaluate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Metrics JSON file (printed to stdout as well).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args, Clone)]
pub struct SpecArgs {
    /// Subband spec JSON file (`subbands`, `df_Hz`).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Subbands as `f_start_Hz:Nk` pairs, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub subbands: Vec<String>,
    /// Frequency step shared by all subbands.
    #[arg(long = "df-hz")]
    pub df_hz: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum MultibandCommand {
    /// Full-band and masked multiband signal of range targets.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        /// Target as `range[:re[:im]]`; repeatable.
        #[arg(long = "target", required = true)]
        targets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-filled fusion of a generated signal into a range spectrum CSV.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 4096)]
        nfft: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-target resolution test.
    Resolve {
        #[command(flatten)]
        spec: SpecArgs,
        /// Target separation (e.g. `7.1mm`).
        #[arg(long, value_parser = parse_length)]
        dz: f64,
        #[arg(long = "snr-db", allow_hyphen_values = true)]
        snr_db: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Training pairs of noisy multiband inputs and full-band labels.
    Dataset {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        count: usize,
        /// Inclusive target-count range `min,max`.
        #[arg(long = "nt-range", value_delimiter = ',', num_args = 1, default_values_t = [1, 200])]
        nt_range: Vec<usize>,
        /// SNR range `min,max` (dB).
        #[arg(long = "snr-range-db", value_delimiter = ',', num_args = 1, allow_hyphen_values = true, default_values_t = [-10.0, 30.0])]
        snr_range_db: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse::<Algorithm>().map_err(|e| e.message)
}

/// Length with an optional `mm`, `cm` or `m` suffix.
pub fn parse_length(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("mm") {
        (v, 1e-3)
    } else if let Some(v) = s.strip_suffix("cm") {
        (v, 1e-2)
    } else if let Some(v) = s.strip_suffix('m') {
        (v, 1.0)
    } else {
        (s, 1.0)
    };
    num.trim().parse::<f64>().map(|v| v * scale).map_err(|e| format!("invalid length `{s}`: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_with_units() {
        assert!((parse_length("7.1mm").unwrap() - 7.1e-3).abs() < 1e-15);
        assert!((parse_length("5cm").unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(parse_length("0.2m").unwrap(), 0.2);
        assert_eq!(parse_length("0").unwrap(), 0.0);
        assert!(parse_length("far").is_err());
    }

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from(["nfsar", "--threads", "2", "reconstruct", "--config", "c.json", "--algo", "bpa", "--db-min", "-30"]).unwrap();
        match cli.command {
            Command::Reconstruct { algo, db_min, .. } => {
                assert_eq!(algo, Some(Algorithm::Bpa));
                assert_eq!(db_min, -30.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["nfsar", "reconstruct", "--config", "c.json", "--algo", "warp"]).is_err());
        let cli = Cli::try_parse_from(["nfsar", "multiband", "dataset", "--count", "4", "--snr-range-db", "-5,5", "--out", "d"]).unwrap();
        match cli.command {
            Command::Multiband { command: MultibandCommand::Dataset { nt_range, snr_range_db, .. } } => {
                assert_eq!(nt_range, vec![1, 200]);
                assert_eq!(snr_range_db, vec![-5.0, 5.0]);
            }
            other => panic!("{other:?}"),
        }
    }
}
