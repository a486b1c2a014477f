//! Report schemas. Field order is fixed by the struct definitions and no
//! report carries timing or host information, so identical inputs give
//! identical bytes.

use serde::Serialize;

use cgge_core::fit::Optimizer;
use cgge_core::fock::oracle::OracleValidation;
use cgge_core::fock::Support;
use cgge_core::metrics::{EnsembleComparison, PinskerCheck};

use crate::config::ExperimentConfig;

/// Bumped on any incompatible change to a report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Conventions {
    /// Support of the GGE and GCE.
    pub gge_gce_support: String,
    pub gce: &'static str,
    pub cgge_support: Support,
    pub energy_grid_origin: f64,
    pub bin_width: f64,
}

#[derive(Debug, Serialize)]
pub struct CorrelationSummary {
    pub trace: f64,
    pub energy: f64,
    pub max_offdiagonal: f64,
    pub offdiagonal_frobenius: f64,
}

#[derive(Debug, Serialize)]
pub struct Entropies {
    pub de: f64,
    pub gge: f64,
    pub gce: f64,
    pub cgge: f64,
}

#[derive(Debug, Serialize)]
pub struct Comparisons {
    pub gge: EnsembleComparison,
    pub gce: EnsembleComparison,
    pub cgge: EnsembleComparison,
}

#[derive(Debug, Serialize)]
pub struct PinskerChecks {
    pub gge: PinskerCheck,
    pub gce: PinskerCheck,
    pub cgge: PinskerCheck,
}

#[derive(Debug, Serialize)]
pub struct DeDiagnostics {
    pub norm: f64,
    pub configs_visited: u64,
}

#[derive(Debug, Serialize)]
pub struct GgeDiagnostics {
    pub saturated: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct GceDiagnostics {
    pub beta: f64,
    pub mu: f64,
    pub saturated: bool,
    pub residual_particles: f64,
    pub residual_energy: f64,
}

#[derive(Debug, Serialize)]
pub struct CggeDiagnostics {
    pub optimizer: Optimizer,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub tolerance: f64,
    pub support_size: f64,
    pub saturated: Vec<usize>,
    pub pinned_pairs: usize,
    pub de_mass_outside_support: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub de: DeDiagnostics,
    pub gge: GgeDiagnostics,
    pub gce: GceDiagnostics,
    pub cgge: CggeDiagnostics,
}

#[derive(Debug, Serialize)]
pub struct QuenchReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub conventions: Conventions,
    pub mode_energies: Vec<f64>,
    pub occupations: Vec<f64>,
    pub correlations: CorrelationSummary,
    pub entropies: Entropies,
    pub comparisons: Comparisons,
    pub pinsker: PinskerChecks,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Serialize)]
pub struct OracleThresholds {
    pub moment_deviation: f64,
    pub amplitude_drift: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub t_max: f64,
    pub samples: usize,
    pub validation: OracleValidation,
    pub thresholds: OracleThresholds,
    pub pass: bool,
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}
