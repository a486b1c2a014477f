//! One function per subcommand; each returns the report text.

use std::fmt::Write as _;
use std::path::Path;

use cgge_core::fit::{CggeModel, CggeModelFile, FockModel};
use cgge_core::fock::distribution::EnergyHistogram;
use cgge_core::fock::oracle::ORACLE_MAX_CONFIGS;
use cgge_core::fock::{binomial, validate_time_average, wick_moments, FockConfig, Leaf, LeafVisitor, PairwiseEnergy, Scan, Support};
use cgge_core::lattice::Quench;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::{build_quench, compare, fit_cgge_only, fit_models, Fits, ENSEMBLES};
use crate::report::*;

fn correlation_summary(q: &Quench) -> CorrelationSummary {
    let g = &q.correlations.g;
    let n = g.nrows();
    let mut max: f64 = 0.0;
    let mut sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max = max.max(g[(i, j)].abs());
                sq += g[(i, j)] * g[(i, j)];
            }
        }
    }
    CorrelationSummary {
        trace: q.correlations.trace(),
        energy: q.energy(),
        max_offdiagonal: max,
        offdiagonal_frobenius: sq.sqrt(),
    }
}

fn support_name(s: &Support) -> String {
    match s {
        Support::Full { .. } => "full Fock space".into(),
        Support::Fixed { m, .. } => format!("{m}-particle sector"),
        Support::Blocks { .. } => "conserved blocks".into(),
    }
}

const GCE_CONVENTION: &str =
    "Fermi-Dirac occupations with (beta, mu) matched to the quench energy and particle number over all of Fock space, then restricted to gge_gce_support";

pub fn quench(config: &ExperimentConfig) -> Result<String, CliError> {
    let q = build_quench(config)?;
    let fits = fit_models(config, &q)?;
    let cmp = compare(config, &q, &fits)?;
    let c: Vec<_> = cmp.models.iter().map(|m| m.comparison.clone()).collect();
    let report = QuenchReport {
        schema_version: SCHEMA_VERSION,
        command: "quench",
        config: config.clone(),
        conventions: Conventions {
            gge_gce_support: support_name(&fits.models[0].support),
            gce: GCE_CONVENTION,
            cgge_support: fits.cgge.model.support,
            energy_grid_origin: cmp.de_histogram.origin,
            bin_width: config.bin,
        },
        mode_energies: q.post.energies.iter().copied().collect(),
        occupations: fits.targets.means.clone(),
        correlations: correlation_summary(&q),
        entropies: Entropies {
            de: cmp.de_entropy,
            gge: c[0].entropy_model,
            gce: c[1].entropy_model,
            cgge: c[2].entropy_model,
        },
        pinsker: PinskerChecks { gge: c[0].pinsker(), gce: c[1].pinsker(), cgge: c[2].pinsker() },
        comparisons: Comparisons { gge: c[0].clone(), gce: c[1].clone(), cgge: c[2].clone() },
        diagnostics: Diagnostics {
            de: DeDiagnostics { norm: cmp.de_norm, configs_visited: cmp.configs_visited },
            gge: GgeDiagnostics { saturated: fits.gge.saturated.clone() },
            gce: GceDiagnostics {
                beta: fits.gce.beta,
                mu: fits.gce.mu,
                saturated: fits.gce.saturated,
                residual_particles: fits.gce.residual_particles,
                residual_energy: fits.gce.residual_energy,
            },
            cgge: CggeDiagnostics {
                optimizer: fits.cgge.optimizer,
                iterations: fits.cgge.model.iterations,
                gradient_norm: fits.cgge.gradient_norm,
                tolerance: fits.cgge.model.tolerance,
                support_size: fits.cgge.model.support.size() as f64,
                saturated: fits.cgge.model.saturated.clone(),
                pinned_pairs: fits.cgge.model.pinned_pairs.len(),
                de_mass_outside_support: cmp.models[2].de_mass_outside_model,
                warnings: fits.cgge.warnings.clone(),
            },
        },
    };
    Ok(to_json(&report))
}

fn csv_header(out: &mut String, command: &str, config: &ExperimentConfig) {
    let _ = writeln!(out, "# schema_version={SCHEMA_VERSION}");
    let _ = writeln!(out, "# command={command}");
    let _ = writeln!(out, "# config={}", serde_json::to_string(config).expect("config serializes"));
}

/// Entropies for every `(J, N)` pair. A failing size is recorded in the
/// `status` column and the sweep moves on.
pub fn sweep(config: &ExperimentConfig, sizes: &[usize], potentials: &[f64]) -> Result<String, CliError> {
    let mut out = String::new();
    csv_header(&mut out, "sweep", config);
    let _ = writeln!(out, "# filling=M=N/2 for every row");
    let _ = writeln!(out, "# gge_gce_support={}", support_name(&crate::pipeline::model_support(config)));
    let _ = writeln!(out, "# gce={GCE_CONVENTION}");
    let _ = writeln!(out, "# cgge=pairwise max-ent fit in the particle-number sector, on the blocks of modes whose particle numbers the targets conserve");
    let _ = writeln!(out, "n,m,j,s_de,s_gge,s_gce,s_cgge,status");
    for &j in potentials {
        for &n in sizes {
            let c = ExperimentConfig { n, m: None, j, ..config.clone() };
            let m = c.particles();
            match sweep_row(&c) {
                Ok(s) => {
                    let _ = writeln!(out, "{n},{m},{j:?},{:?},{:?},{:?},{:?},ok", s[0], s[1], s[2], s[3]);
                }
                Err(e) => {
                    log::warn!("sweep N={n} J={j}: {e}");
                    let msg = e.to_string().replace([',', '\n'], ";");
                    let _ = writeln!(out, "{n},{m},{j:?},,,,,{}: {msg}", e.kind());
                }
            }
        }
    }
    Ok(out)
}

fn sweep_row(c: &ExperimentConfig) -> Result<[f64; 4], CliError> {
    c.validate()?;
    let q = build_quench(c)?;
    let fits = fit_models(c, &q)?;
    let cmp = compare(c, &q, &fits)?;
    let e = |k: usize| cmp.models[k].comparison.entropy_model;
    Ok([cmp.de_entropy, e(0), e(1), e(2)])
}

/// One DE configuration in the requested energy window with every ensemble's weight.
pub struct StateRow {
    pub config: FockConfig,
    pub energy: f64,
    pub probs: [f64; 4],
}

struct WindowAcc<'a> {
    lo: f64,
    hi: f64,
    models: &'a [FockModel],
    rows: Vec<StateRow>,
}

impl LeafVisitor for WindowAcc<'_> {
    fn visit(&mut self, leaf: &Leaf<'_>) {
        let e = leaf.energies[0];
        if e < self.lo || e >= self.hi {
            return;
        }
        let s = FockConfig(leaf.bits);
        let mut probs = [leaf.de, 0.0, 0.0, 0.0];
        for (k, m) in self.models.iter().enumerate() {
            probs[k + 1] = m.prob(s);
        }
        self.rows.push(StateRow { config: s, energy: e, probs });
    }
}

/// Sector configurations with energy in `[lo, hi)`, in enumeration order.
pub fn window_states(q: &Quench, fits: &Fits, lo: f64, hi: f64, budget: u64) -> Result<Vec<StateRow>, CliError> {
    let support = Support::Fixed { n: q.n_modes(), m: q.n_particles() };
    let energies = [PairwiseEnergy::independent(q.post.energies.as_slice().to_vec())];
    let scan = Scan::new(support).with_overlap(&q.overlap).with_energies(&energies);
    let rows = scan
        .run(
            || WindowAcc { lo, hi, models: &fits.models, rows: Vec::new() },
            |mut a, b| {
                a.rows.extend(b.rows);
                a
            },
        )
        .rows;
    if rows.len() as u64 > budget {
        return Err(cgge_core::Error::BudgetExceeded { required: rows.len() as u128, budget }.into());
    }
    Ok(rows)
}

pub fn energy_dist(config: &ExperimentConfig, window: Option<(f64, f64)>, states_out: Option<&Path>) -> Result<String, CliError> {
    let q = build_quench(config)?;
    let fits = fit_models(config, &q)?;
    let cmp = compare(config, &q, &fits)?;
    let hists: Vec<&EnergyHistogram> =
        std::iter::once(&cmp.de_histogram).chain(cmp.models.iter().map(|m| &m.histogram)).collect();
    let nonempty = hists.iter().filter(|h| !h.masses.is_empty());
    let lo = nonempty.clone().map(|h| h.first_index).min().unwrap_or(0);
    let hi = nonempty.map(|h| h.last_index()).max().unwrap_or(-1);
    let grid = cmp.de_histogram.grid();
    let mut out = String::new();
    csv_header(&mut out, "energy-dist", config);
    let _ = writeln!(out, "# origin={:?} bin_width={:?}", grid.origin, grid.width);
    let _ = writeln!(out, "# gge_gce_support={}", support_name(&fits.models[0].support));
    let _ = writeln!(out, "bin,e_low,e_high,de,{}", ENSEMBLES.join(","));
    for k in lo..=hi {
        let _ = write!(out, "{k},{:?},{:?}", grid.low_edge(k), grid.low_edge(k + 1));
        for h in &hists {
            let _ = write!(out, ",{:?}", h.mass_at(k));
        }
        out.push('\n');
    }
    if let Some((lo, hi)) = window {
        let rows = window_states(&q, &fits, lo, hi, config.budget)?;
        let mut s = String::new();
        csv_header(&mut s, "energy-dist states", config);
        let _ = writeln!(s, "# window=[{lo},{hi})");
        let _ = writeln!(s, "config,energy,de,{}", ENSEMBLES.join(","));
        for r in rows {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.config.to_string_n(config.n),
                r.energy,
                r.probs[0],
                r.probs[1],
                r.probs[2],
                r.probs[3]
            );
        }
        match states_out {
            Some(path) => std::fs::write(path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
            None => out.push_str(&s),
        }
    }
    Ok(out)
}

/// Indices where a new Bloch band starts, when the period divides `N`.
pub fn band_boundaries(n: usize, period: usize) -> Vec<usize> {
    if period == 0 || n % period != 0 {
        return Vec::new();
    }
    let width = n / period;
    (1..period).map(|b| b * width).collect()
}

pub fn vij(config: &ExperimentConfig, model_in: Option<&Path>, model_out: Option<&Path>) -> Result<String, CliError> {
    let q = build_quench(config)?;
    let model = match model_in {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let file: CggeModelFile =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            CggeModel::from_file(&file)?
        }
        None => fit_cgge_only(config, &q)?.1.model,
    };
    if model.n_modes() != config.n {
        return Err(CliError::Usage(format!("model has {} modes, config has {}", model.n_modes(), config.n)));
    }
    if let Some(path) = model_out {
        let text = serde_json::to_string_pretty(&model.to_file()).expect("model serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let n = model.n_modes();
    let mut out = String::new();
    csv_header(&mut out, "vij", config);
    let bounds: Vec<String> = band_boundaries(n, config.period).iter().map(|b| b.to_string()).collect();
    let _ = writeln!(out, "# band_boundaries={}", bounds.join(";"));
    let _ = writeln!(out, "# rows and columns ordered by ascending mode energy");
    let _ = write!(out, "mode,energy");
    for j in 0..n {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "{i},{:?}", q.post.energies[i]);
        for j in 0..n {
            let _ = write!(out, ",{:?}", model.v_at(i, j));
        }
        out.push('\n');
    }
    Ok(out)
}

pub const MOMENT_THRESHOLD: f64 = 2e-3;
pub const DRIFT_THRESHOLD: f64 = 1e-9;

pub fn oracle_validate(config: &ExperimentConfig, t_max: f64, samples: usize) -> Result<String, CliError> {
    let m = config.particles();
    if binomial(config.n, m) > ORACLE_MAX_CONFIGS {
        return Err(CliError::Usage(format!(
            "oracle needs C(N, M) <= {ORACLE_MAX_CONFIGS}, got C({}, {m}) = {}",
            config.n,
            binomial(config.n, m)
        )));
    }
    let q = build_quench(config)?;
    let targets = wick_moments(&q.correlations);
    let validation = validate_time_average(&q.overlap, &q.post, &targets, t_max, samples)?;
    let pass = validation.moment_deviation < MOMENT_THRESHOLD && validation.amplitude_drift < DRIFT_THRESHOLD;
    Ok(to_json(&OracleReport {
        schema_version: SCHEMA_VERSION,
        command: "oracle-validate",
        config: config.clone(),
        t_max,
        samples,
        validation,
        thresholds: OracleThresholds { moment_deviation: MOMENT_THRESHOLD, amplitude_drift: DRIFT_THRESHOLD },
        pass,
    }))
}
