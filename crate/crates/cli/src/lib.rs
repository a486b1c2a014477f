//! Command-line experiments: quench reports, entropy sweeps, energy
//! distributions, fitted couplings and oracle validation.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ConfigArgs, ExperimentConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cgge", version, about = "Stationary ensembles after a superlattice quench of free fermions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full comparison of DE, GGE, GCE and CGGE for one quench (JSON).
    Quench {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Entropies versus system size (CSV).
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// System sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [10, 30])]
        sizes: Vec<usize>,
        /// Superlattice strengths [default: the config's J].
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        js: Vec<f64>,
    },
    /// Coarse-grained energy distributions of every ensemble (CSV).
    EnergyDist {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also list single configurations with energy in [LO, HI).
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        window: Option<Vec<f64>>,
        /// Where to write the window listing [default: appended to the output].
        #[arg(long)]
        states_out: Option<PathBuf>,
    },
    /// Fitted CGGE couplings V_ij (CSV).
    Vij {
        #[command(flatten)]
        config: ConfigArgs,
        /// Print the couplings of a saved model instead of fitting.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Save the fitted model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Check time averages of the exact evolution against the diagonal ensemble (JSON).
    OracleValidate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e4)]
        t_max: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

impl Command {
    pub fn config_args(&self) -> &ConfigArgs {
        match self {
            Command::Quench { config }
            | Command::Sweep { config, .. }
            | Command::EnergyDist { config, .. }
            | Command::Vij { config, .. }
            | Command::OracleValidate { config, .. } => config,
        }
    }
}

/// Run a parsed command; returns the resolved config and the report text.
pub fn run(cmd: &Command) -> Result<(ExperimentConfig, String), CliError> {
    let config = cmd.config_args().resolve()?;
    let text = match cmd {
        Command::Quench { .. } => commands::quench(&config)?,
        Command::Sweep { sizes, js, .. } => {
            let js = if js.is_empty() { vec![config.j] } else { js.clone() };
            commands::sweep(&config, sizes, &js)?
        }
        Command::EnergyDist { window, states_out, .. } => {
            let window = window.as_ref().map(|w| (w[0], w[1]));
            commands::energy_dist(&config, window, states_out.as_deref())?
        }
        Command::Vij { model, model_out, .. } => commands::vij(&config, model.as_deref(), model_out.as_deref())?,
        Command::OracleValidate { t_max, samples, .. } => commands::oracle_validate(&config, *t_max, *samples)?,
    };
    Ok((config, text))
}
