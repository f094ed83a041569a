//! Command-line experiment runner.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::h2t2::PseudoLossVariant;
use config::{BetaConfig, CsvConfig, DataConfig, ExperimentConfig, Param, PolicyKind};

#[derive(Debug, Parser)]
#[command(
    name = "h2t2",
    version,
    about = "Online two-threshold offloading experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Base seed; run k uses seed + k.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of seeds.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML experiment config.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Start from a named preset instead of a config file.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Pseudo-loss schedule: unbiased or literal.
    #[arg(long, global = true)]
    pub pseudo_loss: Option<String>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Fixed offloading cost.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Score quantization bits.
    #[arg(long, global = true)]
    pub bits: Option<u8>,
    #[arg(long, global = true)]
    pub delta_fp: Option<f64>,
    #[arg(long, global = true)]
    pub delta_fn: Option<f64>,
    /// Learning rate, a number or `tuned`.
    #[arg(long, global = true)]
    pub eta: Option<String>,
    /// Exploration rate, a number or `tuned`.
    #[arg(long, global = true)]
    pub epsilon: Option<String>,
    /// Comma-separated policy list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// Read scores from a CSV trace instead of generating them.
    #[arg(long, global = true)]
    pub data_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 4 bits, costs 0.7 / 1, 10^4 rounds, unit learning rate, tuned exploration.
    Reference,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured policy for each seed; writes traces and a summary.
    Run,
    /// Sweep the fixed offloading cost.
    SweepBeta,
    /// Sweep the false-positive to false-negative cost ratio.
    SweepAsymmetry,
    /// Sweep the learning rate.
    SweepEta,
    /// Sweep the score quantization depth.
    SweepBits,
    /// Best single- and two-threshold rules in hindsight.
    OfflineOpt,
    /// Write the generated datasets as CSV.
    GenData,
}

impl Cli {
    /// Base config with command-line overrides applied.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(Preset::Reference)) | (None, None) => ExperimentConfig::preset(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.pseudo_loss {
            cfg.learner.pseudo_loss = v.parse::<PseudoLossVariant>()?;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.beta {
            cfg.costs.beta = BetaConfig::Fixed(v);
        }
        if let Some(v) = self.bits {
            cfg.bits = v;
        }
        if let Some(v) = self.delta_fp {
            cfg.costs.delta_fp = v;
        }
        if let Some(v) = self.delta_fn {
            cfg.costs.delta_fn = v;
        }
        if let Some(v) = &self.eta {
            cfg.learner.eta = Param::parse(v)?;
        }
        if let Some(v) = &self.epsilon {
            cfg.learner.epsilon = Param::parse(v)?;
        }
        if let Some(list) = &self.policies {
            cfg.policies = list
                .iter()
                .map(|s| PolicyKind::parse(s.trim()))
                .collect::<Result<_>>()?;
        }
        if let Some(path) = &self.data_csv {
            cfg.data = DataConfig::Csv(CsvConfig {
                path: path.clone(),
                resample: true,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    match cli.command {
        Command::Run => commands::cmd_run(&cfg),
        Command::SweepBeta => commands::cmd_sweep_beta(&cfg),
        Command::SweepAsymmetry => commands::cmd_sweep_asymmetry(&cfg),
        Command::SweepEta => commands::cmd_sweep_eta(&cfg),
        Command::SweepBits => commands::cmd_sweep_bits(&cfg),
        Command::OfflineOpt => commands::cmd_offline_opt(&cfg),
        Command::GenData => commands::cmd_gen_data(&cfg),
    }
}

/// Process exit status for an error: 3 for bad input data, 2 for bad
/// configuration, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_data_error() {
        3
    } else if matches!(err, Error::Config(_) | Error::InvalidParameter(_)) {
        2
    } else {
        1
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
