//! Quench, fits and the streamed comparison shared by the subcommands.

use log::info;

use cgge_core::fit::{fit_cgge, fit_gce, fit_gge, Backend, CggeFit, CggeOptions, FockModel, GceModel, GgeModel, SamplerOptions, SupportKind};
use cgge_core::fock::{wick_moments, MomentTargets, Support};
use cgge_core::lattice::{FermiRule, Quench};
use cgge_core::metrics::{compare_streamed, StreamedComparison};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const ENSEMBLES: [&str; 3] = ["gge", "gce", "cgge"];

pub struct Fits {
    pub targets: MomentTargets,
    pub gge: GgeModel,
    pub gce: GceModel,
    pub cgge: CggeFit,
    /// GGE, GCE and CGGE as normalized Fock-space models, in [`ENSEMBLES`] order.
    pub models: Vec<FockModel>,
}

pub fn build_quench(config: &ExperimentConfig) -> Result<Quench, CliError> {
    Ok(Quench::from_params(&config.quench_params(), FermiRule::Error)?)
}

pub fn cgge_options(config: &ExperimentConfig) -> CggeOptions {
    CggeOptions {
        // the diagonal ensemble never leaves the quench's sector
        support: SupportKind::Fixed,
        backend: config.backend,
        budget: config.budget,
        sampler: SamplerOptions { seed: config.seed, ..Default::default() },
        ..Default::default()
    }
}

pub fn fit_cgge_only(config: &ExperimentConfig, q: &Quench) -> Result<(MomentTargets, CggeFit), CliError> {
    let targets = wick_moments(&q.correlations);
    let fit = fit_cgge(&targets, &cgge_options(config))?;
    Ok((targets, fit))
}

pub fn model_support(config: &ExperimentConfig) -> Support {
    match config.sector {
        SupportKind::Full => Support::Full { n: config.n },
        SupportKind::Fixed => Support::Fixed { n: config.n, m: config.particles() },
    }
}

pub fn fit_models(config: &ExperimentConfig, q: &Quench) -> Result<Fits, CliError> {
    let (targets, cgge) = fit_cgge_only(config, q)?;
    info!("cgge: {} iterations, support {} configurations", cgge.model.iterations, cgge.model.support.size());
    let gge = fit_gge(&targets);
    let gce = fit_gce(&q.post, q.energy(), config.particles())?;
    let support = model_support(config);
    let cgge_model = match (cgge.model.backend, cgge.model.to_fock_model()) {
        (_, Ok(m)) => m,
        // the sampled backend leaves the model unnormalized
        (Backend::Sampled, Err(_)) => FockModel::normalized(cgge.model.energy(), cgge.model.support, config.budget)?,
        (_, Err(e)) => return Err(e.into()),
    };
    let models = vec![
        FockModel::independent(gge.lambdas.clone(), support)?,
        FockModel::independent(gce.lambdas.clone(), support)?,
        cgge_model,
    ];
    Ok(Fits { targets, gge, gce, cgge, models })
}

pub fn compare(config: &ExperimentConfig, q: &Quench, fits: &Fits) -> Result<StreamedComparison, CliError> {
    Ok(compare_streamed(&q.overlap, &q.post, &fits.models, config.bin, config.budget)?)
}
