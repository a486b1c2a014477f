//! Stationary ensembles fitted to the conserved quantities of a quench:
//! GGE (mode occupations), GCE (energy and particle number) and the
//! correlated GGE (occupations and pair correlations).

pub mod cgge;
pub mod family;
pub mod gce;
pub mod gge;
pub mod model;
pub mod sampler;

pub use cgge::{fit_cgge, Backend, CggeFit, CggeModel, CggeModelFile, CggeOptions, Optimizer, SupportKind};
pub use gce::{fit_gce, GceModel};
pub use gge::{fit_gge, GgeModel};
pub use model::{model_distribution, model_entropy, FockModel};
pub use sampler::SamplerOptions;

/// Occupations closer than this to 0 or 1 are treated as frozen.
pub const SATURATION_EPS: f64 = 1e-12;

/// Multiplier magnitude used for frozen modes (`exp(-40) ~ 4e-18`).
pub const LAMBDA_CLAMP: f64 = 40.0;

/// `-h ln h - (1 - h) ln(1 - h)`, zero at the endpoints.
pub fn binary_entropy(h: f64) -> f64 {
    let mut s = 0.0;
    if h > 0.0 && h < 1.0 {
        s -= h * h.ln();
        s -= (1.0 - h) * (1.0 - h).ln();
    }
    s
}
