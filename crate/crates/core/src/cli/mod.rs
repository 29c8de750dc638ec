//! The `pod` command line: configuration-file driven runs.
//!
//! Layout under `--out`:
//!
//! ```text
//! run.lock                      resolved configuration, replayable via --config
//! data/<split>/{images,labels}  prepared corpus
//! models/<mode>.podmodel        checkpoint (wall time in its metadata)
//! models/<mode>.log             one key=value line per epoch
//! models/<mode>_patches/        adversarial patch history (adversarial modes)
//! augmented/<mode>/             training views written by --dump-augmented
//! attacks/<scenario>/<mode>/    attacked test set
//! report/report.{csv,md,json}   scenario matrix
//! ```

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::{cmd_attack, cmd_evaluate, cmd_prepare, cmd_report, cmd_train, Outcome};
pub use config::{DatasetSection, EvalSection, RunConfig, SynthSection, TrainSection};

use crate::attacks::AttackKind;
use crate::detector::TrainMode;
use crate::{PodError, Result};

pub const SEED_ENV: &str = "POD_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "pod",
    version,
    about = "Patch-based occlusion-aware detection experiments"
)]
pub struct Cli {
    /// Run configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed; overrides POD_SEED and the file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or ingest the train/test corpus.
    Prepare,
    /// Train one mode, or every configured mode.
    Train {
        /// One of std, pod, pod_nodet, advpod, advpod_nodet.
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Also write this many first-epoch training views.
        #[arg(long, default_value_t = 0)]
        dump_augmented: usize,
    },
    /// Write the attacked test set for one scenario and model.
    Attack {
        /// One of noise, universal, hcb, shapeloc.
        #[arg(long)]
        kind: AttackKind,
        /// Scenario name when several share a kind.
        #[arg(long)]
        name: Option<String>,
        /// Model to attack; the first configured mode by default.
        #[arg(long)]
        mode: Option<TrainMode>,
    },
    /// Evaluate every trained mode on every scenario.
    Evaluate,
    /// Print the last report and re-check thresholds.
    Report,
}

/// Loads the configuration and applies overrides, in increasing precedence:
/// file, `POD_SEED`, flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        config.seed = v
            .trim()
            .parse()
            .map_err(|_| PodError::config(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    config.resolve();
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let config = resolve_config(cli)?;
    // A second call in the same process keeps the existing pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global();
    commands::write_lock(&config)?;
    match &cli.command {
        Command::Prepare => cmd_prepare(&config),
        Command::Train {
            mode,
            dump_augmented,
        } => cmd_train(&config, *mode, *dump_augmented),
        Command::Attack { kind, name, mode } => cmd_attack(&config, *kind, name.as_deref(), *mode),
        Command::Evaluate => cmd_evaluate(&config),
        Command::Report => cmd_report(&config),
    }
}

/// Exit status: 0 success, 1 threshold failure, 2 configuration or usage
/// error, 3 any other failure.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ThresholdFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                PodError::Config { .. } => 2,
                _ => 3,
            })
        }
    }
}
