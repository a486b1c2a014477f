//! Distances between ensembles that are diagonal in the same Fock basis.
//!
//! For commuting states the trace distance is the total variation distance
//! of the two probability vectors and the quantum relative entropy is the
//! classical KL divergence, so everything here is a sum over configurations.

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fit::model::{model_entropy, FockModel};
use crate::fit::binary_entropy;
use crate::fit::gge::fermi;
use crate::fock::config::{FockConfig, Support};
use crate::fock::distribution::{support_min_energy, BinGrid, DiagonalDistribution, EnergyHistogram};
use crate::fock::scan::{Leaf, LeafVisitor, PairwiseEnergy, Scan};
use crate::lattice::{ModeBasis, OverlapMatrix};
use crate::sum::NeumaierSum;

/// Diagonal-ensemble mass outside a model's support below which it is
/// treated as rounding residue of the determinant evaluation.
pub const SUPPORT_MASS_TOL: f64 = 1e-12;

/// A KL divergence, possibly infinite. Serializes as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn value(self) -> f64 {
        match self {
            Divergence::Finite(x) => x,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }
}

impl Serialize for Divergence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Divergence::Finite(x) => s.serialize_f64(*x),
            Divergence::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Divergence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Divergence::Finite(x)),
            Repr::Str(s) if s == "inf" => Ok(Divergence::Infinite),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unexpected divergence {s:?}"))),
        }
    }
}

fn same_modes(p: &DiagonalDistribution, q: &DiagonalDistribution) -> Result<()> {
    if p.support.n_modes() != q.support.n_modes() {
        return Err(Error::SupportMismatch(format!(
            "{} modes against {}",
            p.support.n_modes(),
            q.support.n_modes()
        )));
    }
    Ok(())
}

fn lookup(q: &DiagonalDistribution) -> HashMap<u64, f64> {
    q.iter().map(|(c, x)| (c.0, x)).collect()
}

/// `sum p ln(p / q)`; infinite when `p > 0` somewhere `q = 0`.
pub fn kl_divergence(p: &DiagonalDistribution, q: &DiagonalDistribution) -> Result<Divergence> {
    Ok(kl_with_tolerance(p, q, 0.0)?.0)
}

/// [`kl_divergence`] that ignores up to `outside_tol` of `p`'s mass where
/// `q = 0`. Also returns that mass.
pub fn kl_with_tolerance(
    p: &DiagonalDistribution,
    q: &DiagonalDistribution,
    outside_tol: f64,
) -> Result<(Divergence, f64)> {
    same_modes(p, q)?;
    let qmap = lookup(q);
    let mut kl = NeumaierSum::new();
    let mut outside = NeumaierSum::new();
    for (c, x) in p.iter() {
        if x <= 0.0 {
            continue;
        }
        let y = qmap.get(&c.0).copied().unwrap_or(0.0);
        if y > 0.0 {
            kl.add(x * (x.ln() - y.ln()));
        } else {
            outside.add(x);
        }
    }
    let outside = outside.value();
    if outside > outside_tol {
        return Ok((Divergence::Infinite, outside));
    }
    Ok((Divergence::Finite(kl.value().max(0.0)), outside))
}

/// `(1/2) sum |p - q|` over the union of both supports.
pub fn trace_distance(p: &DiagonalDistribution, q: &DiagonalDistribution) -> Result<f64> {
    same_modes(p, q)?;
    let mut qmap = lookup(q);
    let mut s = NeumaierSum::new();
    for (c, x) in p.iter() {
        let y = qmap.remove(&c.0).unwrap_or(0.0);
        s.add((x - y).abs());
    }
    let mut rest: Vec<(u64, f64)> = qmap.into_iter().collect();
    rest.sort_unstable_by_key(|r| r.0);
    for (_, y) in rest {
        s.add(y.abs());
    }
    Ok((0.5 * s.value()).clamp(0.0, 1.0))
}

/// Total variation distance between two energy histograms on the same grid.
pub fn histogram_tv(a: &EnergyHistogram, b: &EnergyHistogram) -> f64 {
    if a.masses.is_empty() && b.masses.is_empty() {
        return 0.0;
    }
    let lo = a.first_index.min(b.first_index);
    let hi = a.last_index().max(b.last_index());
    let mut s = NeumaierSum::new();
    for k in lo..=hi {
        s.add((a.mass_at(k) - b.mass_at(k)).abs());
    }
    (0.5 * s.value()).clamp(0.0, 1.0)
}

/// Grid origin shared by two supports: the lowest energy either can reach.
pub fn common_origin(a: &Support, b: &Support, basis: &ModeBasis) -> f64 {
    support_min_energy(*a, basis).min(support_min_energy(*b, basis))
}

/// Total variation distance after binning both distributions in total energy.
pub fn coarse_grained_tv(
    p: &DiagonalDistribution,
    q: &DiagonalDistribution,
    basis: &ModeBasis,
    bin_width: f64,
) -> Result<f64> {
    same_modes(p, q)?;
    let grid = BinGrid::new(common_origin(&p.support, &q.support, basis), bin_width)?;
    let hp = crate::fock::distribution::histogram_on(p, basis, grid)?;
    let hq = crate::fock::distribution::histogram_on(q, basis, grid)?;
    Ok(histogram_tv(&hp, &hq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerCheck {
    pub pass: bool,
    /// `kl - 2 tv^2`.
    pub margin: f64,
}

pub fn pinsker_check(kl: f64, tv: f64) -> PinskerCheck {
    let margin = kl - 2.0 * tv * tv;
    PinskerCheck { pass: margin + 1e-12 >= 0.0, margin }
}

/// Best average success rate of telling the two states apart in one shot.
pub fn success_probability(tv: f64) -> f64 {
    0.5 + 0.5 * tv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleComparison {
    pub kl_de_to_model: Divergence,
    pub trace_distance: f64,
    pub tv_coarse: f64,
    pub entropy_de: f64,
    pub entropy_model: f64,
    pub success_probability: f64,
}

impl EnsembleComparison {
    pub fn pinsker(&self) -> PinskerCheck {
        pinsker_check(self.kl_de_to_model.value(), self.trace_distance)
    }
}

/// Compare two materialized distributions; `de` plays the role of the reference.
pub fn compare(
    de: &DiagonalDistribution,
    model: &DiagonalDistribution,
    basis: &ModeBasis,
    bin_width: f64,
) -> Result<EnsembleComparison> {
    let (kl, _) = kl_with_tolerance(de, model, SUPPORT_MASS_TOL)?;
    let tv = trace_distance(de, model)?;
    Ok(EnsembleComparison {
        kl_de_to_model: kl,
        trace_distance: tv,
        tv_coarse: coarse_grained_tv(de, model, basis, bin_width)?,
        entropy_de: crate::fock::distribution::entropy(de.probs.iter().copied()),
        entropy_model: crate::fock::distribution::entropy(model.probs.iter().copied()),
        success_probability: success_probability(tv),
    })
}

/// Exact energy histogram of independent modes over the full space.
///
/// The modes are split in two halves; for each configuration of the first
/// half the second half's configurations, sorted by energy, fall into bins
/// along contiguous runs, so the cost is `2^(N/2)` times the bin count.
pub fn independent_full_histogram(lambdas: &[f64], energies: &[f64], grid: BinGrid) -> Result<EnergyHistogram> {
    let n = lambdas.len();
    if energies.len() != n {
        return Err(Error::Dimension("multiplier and energy counts differ".into()));
    }
    if n > 44 {
        return Err(Error::InvalidParams(format!("split-half histogram needs N <= 44, got {n}")));
    }
    let half = |modes: std::ops::Range<usize>| -> Vec<(f64, f64)> {
        let k = modes.len();
        let mut out = Vec::with_capacity(1 << k);
        for bits in 0u64..1 << k {
            let mut e = 0.0;
            let mut p = 1.0;
            for (t, j) in modes.clone().enumerate() {
                let h = fermi(lambdas[j]);
                if bits >> t & 1 == 1 {
                    e += energies[j];
                    p *= h;
                } else {
                    p *= 1.0 - h;
                }
            }
            out.push((e, p));
        }
        out
    };
    let a = half(0..n / 2);
    let mut b = half(n / 2..n);
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut prefix = Vec::with_capacity(b.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for &(_, p) in &b {
        acc += p;
        prefix.push(acc);
    }
    let mut h = EnergyHistogram::empty(grid);
    for &(ea, pa) in &a {
        if pa == 0.0 {
            continue;
        }
        // bin index is monotone in the second half's energy
        let mut pos = 0;
        while pos < b.len() {
            let k = grid.index(ea + b[pos].0);
            let end = pos + b[pos..].partition_point(|x| grid.index(ea + x.0) <= k);
            h.add(grid.low_edge(k) + 0.5 * grid.width, pa * (prefix[end] - prefix[pos]));
            pos = end;
        }
    }
    Ok(h)
}

/// Per-model part of a streamed comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub comparison: EnsembleComparison,
    /// Diagonal-ensemble mass where the model vanishes.
    pub de_mass_outside_model: f64,
    /// Model mass inside the diagonal ensemble's particle-number sector.
    pub model_mass_in_sector: f64,
    pub histogram: EnergyHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamedComparison {
    pub de_norm: f64,
    pub de_entropy: f64,
    pub de_histogram: EnergyHistogram,
    pub configs_visited: u64,
    pub models: Vec<ModelComparison>,
}

struct ModelAcc {
    kl: NeumaierSum,
    outside: NeumaierSum,
    abs_diff: NeumaierSum,
    mass: NeumaierSum,
    entropy: NeumaierSum,
    hist: Option<EnergyHistogram>,
}

struct CompareAcc<'a> {
    models: &'a [FockModel],
    norm: NeumaierSum,
    entropy: NeumaierSum,
    hist: EnergyHistogram,
    visited: u64,
    per: Vec<ModelAcc>,
}

impl<'a> CompareAcc<'a> {
    fn new(models: &'a [FockModel], grid: BinGrid, sector_hist: &[bool]) -> Self {
        CompareAcc {
            models,
            norm: NeumaierSum::new(),
            entropy: NeumaierSum::new(),
            hist: EnergyHistogram::empty(grid),
            visited: 0,
            per: sector_hist
                .iter()
                .map(|&h| ModelAcc {
                    kl: NeumaierSum::new(),
                    outside: NeumaierSum::new(),
                    abs_diff: NeumaierSum::new(),
                    mass: NeumaierSum::new(),
                    entropy: NeumaierSum::new(),
                    hist: h.then(|| EnergyHistogram::empty(grid)),
                })
                .collect(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.norm.merge(&other.norm);
        self.entropy.merge(&other.entropy);
        self.hist.merge(&other.hist);
        self.visited += other.visited;
        for (a, b) in self.per.iter_mut().zip(other.per) {
            a.kl.merge(&b.kl);
            a.outside.merge(&b.outside);
            a.abs_diff.merge(&b.abs_diff);
            a.mass.merge(&b.mass);
            a.entropy.merge(&b.entropy);
            if let (Some(x), Some(y)) = (&mut a.hist, &b.hist) {
                x.merge(y);
            }
        }
        self
    }
}

impl LeafVisitor for CompareAcc<'_> {
    fn visit(&mut self, leaf: &Leaf<'_>) {
        self.visited += 1;
        let p = leaf.de;
        let k = self.models.len();
        // the last energy function is the physical one
        let e_phys = leaf.energies[k];
        if p > 0.0 {
            self.norm.add(p);
            self.entropy.add(-p * p.ln());
            self.hist.add(e_phys, p);
        }
        for (i, (m, acc)) in self.models.iter().zip(self.per.iter_mut()).enumerate() {
            let log_q = if m.support.contains(FockConfig(leaf.bits)) {
                -leaf.energies[i] - m.log_z
            } else {
                f64::NEG_INFINITY
            };
            let q = log_q.exp();
            if p > 0.0 {
                if q > 0.0 {
                    acc.kl.add(p * (p.ln() - log_q));
                } else {
                    acc.outside.add(p);
                }
            }
            acc.abs_diff.add((p - q).abs());
            if q > 0.0 {
                acc.mass.add(q);
                acc.entropy.add(-q * log_q);
                if let Some(h) = &mut acc.hist {
                    h.add(e_phys, q);
                }
            }
        }
    }
}

/// Whether every configuration of `s` has `particles` particles.
fn within_sector(s: &Support, particles: usize) -> bool {
    s.particles() == Some(particles)
}

/// One streamed pass over the diagonal ensemble's sector comparing it with
/// every model.
///
/// Models living inside the sector are handled entirely within the pass.
/// Full-space models contribute their off-sector mass to the trace distance
/// as `1 - (mass in sector)`; their energy histograms come from the exact
/// split-half construction when they are independent, and from a second
/// full-space scan (subject to `budget`) otherwise. All histograms share one
/// grid, anchored at the lowest energy reachable by any of the supports.
pub fn compare_streamed(
    u: &OverlapMatrix,
    basis: &ModeBasis,
    models: &[FockModel],
    bin_width: f64,
    budget: u64,
) -> Result<StreamedComparison> {
    let n = u.n_modes();
    let m = u.n_particles();
    let sector = Support::Fixed { n, m };
    sector.validate()?;
    if basis.n_modes() != n || models.iter().any(|x| x.n_modes() != n) {
        return Err(Error::Dimension("basis, overlap and models disagree on N".into()));
    }
    let origin = models.iter().fold(support_min_energy(sector, basis), |o, x| o.min(support_min_energy(x.support, basis)));
    let grid = BinGrid::new(origin, bin_width)?;
    let inside: Vec<bool> = models.iter().map(|x| within_sector(&x.support, m)).collect();
    for x in models.iter().filter(|x| !within_sector(&x.support, m)) {
        if !x.is_independent() {
            x.support.check_budget(budget)?;
        }
    }
    let mut energies: Vec<PairwiseEnergy> = models.iter().map(|x| x.energy.clone()).collect();
    energies.push(PairwiseEnergy::independent(basis.energies.as_slice().to_vec()));
    let scan = Scan::new(sector).with_overlap(u).with_energies(&energies);
    let acc = scan.run(|| CompareAcc::new(models, grid, &inside), CompareAcc::merge);

    let de_entropy = acc.entropy.value().max(0.0);
    let mut out = Vec::with_capacity(models.len());
    for (k, (model, pm)) in models.iter().zip(acc.per).enumerate() {
        let mass = pm.mass.value();
        let (entropy_model, histogram) = if inside[k] {
            (pm.entropy.value().max(0.0), pm.hist.expect("sector histogram"))
        } else if model.is_independent() && matches!(model.support, Support::Full { .. }) {
            let s: f64 = model.energy.lambdas.iter().map(|&l| binary_entropy(fermi(l))).sum();
            let h = independent_full_histogram(&model.energy.lambdas, basis.energies.as_slice(), grid)?;
            (s, h)
        } else {
            (model_entropy(model, budget)?, model_histogram(model, basis, grid)?)
        };
        let outside = pm.outside.value();
        let kl = if outside > SUPPORT_MASS_TOL {
            Divergence::Infinite
        } else {
            Divergence::Finite(pm.kl.value().max(0.0))
        };
        let off_sector = if inside[k] { 0.0 } else { (1.0 - mass).max(0.0) };
        let tv = (0.5 * (pm.abs_diff.value() + off_sector)).clamp(0.0, 1.0);
        out.push(ModelComparison {
            comparison: EnsembleComparison {
                kl_de_to_model: kl,
                trace_distance: tv,
                tv_coarse: histogram_tv(&acc.hist, &histogram),
                entropy_de: de_entropy,
                entropy_model,
                success_probability: success_probability(tv),
            },
            de_mass_outside_model: outside,
            model_mass_in_sector: mass,
            histogram,
        });
    }
    Ok(StreamedComparison {
        de_norm: acc.norm.value(),
        de_entropy,
        de_histogram: acc.hist,
        configs_visited: acc.visited,
        models: out,
    })
}

struct HistAcc<'a> {
    model: &'a FockModel,
    hist: EnergyHistogram,
}

impl LeafVisitor for HistAcc<'_> {
    fn visit(&mut self, leaf: &Leaf<'_>) {
        let q = (-leaf.energies[0] - self.model.log_z).exp();
        if q > 0.0 {
            self.hist.add(leaf.energies[1], q);
        }
    }
}

/// Energy histogram of a model by a scan over its support.
pub fn model_histogram(model: &FockModel, basis: &ModeBasis, grid: BinGrid) -> Result<EnergyHistogram> {
    let energies = [model.energy.clone(), PairwiseEnergy::independent(basis.energies.as_slice().to_vec())];
    let scan = Scan::new(model.support).with_energies(&energies);
    Ok(scan
        .run(
            || HistAcc { model, hist: EnergyHistogram::empty(grid) },
            |mut a, b| {
                a.hist.merge(&b.hist);
                a
            },
        )
        .hist)
}
