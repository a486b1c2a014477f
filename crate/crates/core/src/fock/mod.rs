//! Many-body Fock space of the post-quench modes: configurations, diagonal
//! ensemble amplitudes, moments and a brute-force time-evolution check.

pub mod config;
pub mod determinant;
pub mod distribution;
pub mod moments;
pub mod oracle;
pub mod scan;

pub use config::{binomial, enumerate_configs, support_configs, FockConfig, Support, DEFAULT_BUDGET};
pub use determinant::{de_probability, slater_amplitude, PrefixElimination};
pub use distribution::{
    de_distribution, de_entropy, de_summary, energy_histogram, entropy, histogram_on, BinGrid,
    DeSummary, DiagonalDistribution, EnergyHistogram, HistogramBin,
};
pub use moments::{wick_moments, MomentTargets};
pub use oracle::{time_evolution_oracle, validate_time_average, OracleSnapshot, OracleValidation};
pub use scan::{Leaf, LeafVisitor, PairwiseEnergy, Scan};
