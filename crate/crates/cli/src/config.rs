//! Experiment configuration: JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use cgge_core::fit::{Backend, SupportKind};
use cgge_core::fock::DEFAULT_BUDGET;
use cgge_core::lattice::{Boundary, QuenchParams};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    /// Particle number; `n / 2` when absent.
    pub m: Option<usize>,
    pub t: f64,
    pub j: f64,
    pub period: usize,
    pub bc: Boundary,
    /// Energy bin width for coarse graining.
    pub bin: f64,
    pub backend: Backend,
    /// Where the GGE and GCE live: all of Fock space or the quench's sector.
    pub sector: SupportKind,
    pub budget: u64,
    pub seed: u64,
    /// Worker threads; all available cores when absent. Never changes results.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 10,
            m: None,
            t: 1.0,
            j: 12.0,
            period: 5,
            bc: Boundary::Periodic,
            bin: 1.0,
            backend: Backend::Exact,
            sector: SupportKind::Full,
            budget: DEFAULT_BUDGET,
            seed: 0x5eed,
            threads: None,
            out: None,
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Lattice sites (= single-particle modes).
    #[arg(long)]
    pub n: Option<usize>,
    /// Particle number [default: N/2].
    #[arg(long)]
    pub m: Option<usize>,
    /// Hopping amplitude.
    #[arg(long)]
    pub t: Option<f64>,
    /// Post-quench superlattice strength.
    #[arg(long, allow_negative_numbers = true)]
    pub j: Option<f64>,
    /// Superlattice period.
    #[arg(long)]
    pub period: Option<usize>,
    /// Boundary condition: periodic or open.
    #[arg(long)]
    pub bc: Option<Boundary>,
    /// Energy bin width.
    #[arg(long)]
    pub bin: Option<f64>,
    /// CGGE moment backend: exact or sampled.
    #[arg(long)]
    pub backend: Option<Backend>,
    /// GGE/GCE support: full or fixed.
    #[arg(long)]
    pub sector: Option<SupportKind>,
    /// Largest number of configurations to materialize.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Seed for the sampled backend.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(n, t, j, period, bc, bin, backend, sector, budget, seed);
        if self.m.is_some() {
            c.m = self.m;
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn particles(&self) -> usize {
        self.m.unwrap_or(self.n / 2)
    }

    pub fn quench_params(&self) -> QuenchParams {
        QuenchParams {
            n_sites: self.n,
            hopping: self.t,
            potential_strength: self.j,
            period: self.period,
            n_particles: self.particles(),
            boundary: self.bc,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n > 64 {
            return Err(CliError::Usage(format!("at most 64 modes are supported, got {}", self.n)));
        }
        if !(self.bin > 0.0) {
            return Err(CliError::Usage(format!("bin width must be positive, got {}", self.bin)));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        self.quench_params().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 30, "j": 4.0, "bin": 0.5}"#).unwrap();
        let args = ConfigArgs { config: Some(path), j: Some(12.0), ..Default::default() };
        let c = args.resolve().unwrap();
        assert_eq!((c.n, c.j, c.bin, c.particles()), (30, 12.0, 0.5, 15));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sites": 30}"#).unwrap();
        let args = ConfigArgs { config: Some(path), ..Default::default() };
        assert!(matches!(args.resolve(), Err(CliError::Usage(_))));
    }
}
