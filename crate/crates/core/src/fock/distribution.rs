//! Classical distributions over Fock configurations.
//!
//! Every ensemble in this crate is diagonal in the post-quench Fock basis, so
//! it is fully described by one probability per occupation string.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::config::{FockConfig, Support};
use crate::fock::scan::{Leaf, LeafVisitor, Scan};
use crate::lattice::{ModeBasis, OverlapMatrix};
use crate::sum::NeumaierSum;

/// Materialized distribution, configurations in enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalDistribution {
    pub support: Support,
    pub configs: Vec<FockConfig>,
    pub probs: Vec<f64>,
}

impl DiagonalDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().copied().collect::<NeumaierSum>().value()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FockConfig, f64)> + '_ {
        self.configs.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn prob(&self, s: FockConfig) -> f64 {
        self.configs.iter().position(|&c| c == s).map_or(0.0, |k| self.probs[k])
    }

    /// Lift onto a larger support, assigning zero to the added configurations.
    pub fn embed(&self, target: Support) -> Result<DiagonalDistribution> {
        if target.n_modes() != self.support.n_modes() {
            return Err(Error::SupportMismatch(format!(
                "cannot embed {:?} into {:?}",
                self.support, target
            )));
        }
        if target == self.support {
            return Ok(self.clone());
        }
        if self.iter().any(|(c, p)| p != 0.0 && !target.contains(c)) {
            return Err(Error::SupportMismatch(format!(
                "{:?} has mass outside {:?}",
                self.support, target
            )));
        }
        let configs = crate::fock::config::support_configs(target, u64::MAX)?;
        let mut probs = vec![0.0; configs.len()];
        let index: std::collections::HashMap<u64, usize> =
            configs.iter().enumerate().map(|(k, c)| (c.0, k)).collect();
        for (c, p) in self.iter() {
            if let Some(&k) = index.get(&c.0) {
                probs[k] = p;
            }
        }
        Ok(DiagonalDistribution { support: target, configs, probs })
    }

    /// Binary export: `b"FOCKDIST"`, then little-endian u32 format version (1),
    /// u32 `N`, u32 `M` (`u32::MAX` for the full space), u64 record count, then
    /// `(u64 config, f64 probability)` records.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"FOCKDIST")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.support.n_modes() as u32).to_le_bytes())?;
        let m = self.support.particles().map_or(u32::MAX, |m| m as u32);
        w.write_all(&m.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (c, p) in self.iter() {
            w.write_all(&c.0.to_le_bytes())?;
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"FOCKDIST" {
            return Err(bad("not a FOCKDIST file"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(bad("unsupported FOCKDIST version"));
        }
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let m = u32::from_le_bytes(b4);
        let support =
            if m == u32::MAX { Support::Full { n } } else { Support::Fixed { n, m: m as usize } };
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut configs = Vec::with_capacity(count);
        let mut probs = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            configs.push(FockConfig(u64::from_le_bytes(b8)));
            r.read_exact(&mut b8)?;
            probs.push(f64::from_le_bytes(b8));
        }
        Ok(DiagonalDistribution { support, configs, probs })
    }

    /// CSV export with a `config,probability` header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "config,probability")?;
        for (c, p) in self.iter() {
            writeln!(w, "{},{}", c.0, p)?;
        }
        Ok(())
    }
}

struct Materialize {
    configs: Vec<FockConfig>,
    probs: Vec<f64>,
}

impl LeafVisitor for Materialize {
    fn visit(&mut self, leaf: &Leaf<'_>) {
        self.configs.push(FockConfig(leaf.bits));
        self.probs.push(leaf.de);
    }
}

/// Diagonal ensemble over the `M`-particle sector, materialized.
pub fn de_distribution(u: &OverlapMatrix, budget: u64) -> Result<DiagonalDistribution> {
    let support = Support::Fixed { n: u.n_modes(), m: u.n_particles() };
    support.validate()?;
    support.check_budget(budget)?;
    let scan = Scan::new(support).with_overlap(u);
    let out = scan.run(
        || Materialize { configs: Vec::new(), probs: Vec::new() },
        |mut a, b| {
            a.configs.extend(b.configs);
            a.probs.extend(b.probs);
            a
        },
    );
    Ok(DiagonalDistribution { support, configs: out.configs, probs: out.probs })
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(probs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::new();
    for p in probs {
        if p > 0.0 {
            s.add(-p * p.ln());
        }
    }
    s.value().max(0.0)
}

pub fn de_entropy(dist: &DiagonalDistribution) -> f64 {
    entropy(dist.probs.iter().copied())
}

/// Energy grid `[origin + k dE, origin + (k + 1) dE)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    pub origin: f64,
    pub width: f64,
}

impl BinGrid {
    pub fn new(origin: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParams(format!("bin width must be positive, got {width}")));
        }
        Ok(BinGrid { origin, width })
    }

    #[inline]
    pub fn index(&self, e: f64) -> i64 {
        if self.width.is_infinite() {
            return 0;
        }
        // many-body energies that equal the origin up to rounding belong to bin 0
        let x = (e - self.origin) / self.width;
        if x < 0.0 && x > -1e-9 {
            0
        } else {
            x.floor() as i64
        }
    }

    pub fn low_edge(&self, k: i64) -> f64 {
        if self.width.is_infinite() {
            self.origin
        } else {
            self.origin + k as f64 * self.width
        }
    }
}

/// Probability mass per energy bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyHistogram {
    pub bin_width: f64,
    pub origin: f64,
    /// Index of the first bin in `masses`.
    pub first_index: i64,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub e_low: f64,
    pub mass: f64,
}

impl EnergyHistogram {
    pub fn empty(grid: BinGrid) -> Self {
        EnergyHistogram { bin_width: grid.width, origin: grid.origin, first_index: 0, masses: vec![] }
    }

    pub fn grid(&self) -> BinGrid {
        BinGrid { origin: self.origin, width: self.bin_width }
    }

    pub fn bins(&self) -> Vec<HistogramBin> {
        let g = self.grid();
        self.masses
            .iter()
            .enumerate()
            .map(|(k, &mass)| HistogramBin { e_low: g.low_edge(self.first_index + k as i64), mass })
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().copied().collect::<NeumaierSum>().value()
    }

    pub fn mass_at(&self, index: i64) -> f64 {
        let k = index - self.first_index;
        if k < 0 || k as usize >= self.masses.len() {
            0.0
        } else {
            self.masses[k as usize]
        }
    }

    pub fn last_index(&self) -> i64 {
        self.first_index + self.masses.len() as i64 - 1
    }

    fn ensure(&mut self, index: i64) -> usize {
        if self.masses.is_empty() {
            self.first_index = index;
            self.masses.push(0.0);
            return 0;
        }
        if index < self.first_index {
            let extra = (self.first_index - index) as usize;
            let mut m = vec![0.0; extra];
            m.extend_from_slice(&self.masses);
            self.masses = m;
            self.first_index = index;
        }
        let k = (index - self.first_index) as usize;
        if k >= self.masses.len() {
            self.masses.resize(k + 1, 0.0);
        }
        k
    }

    pub fn add(&mut self, energy: f64, mass: f64) {
        let k = self.ensure(self.grid().index(energy));
        self.masses[k] += mass;
    }

    pub fn merge(&mut self, other: &EnergyHistogram) {
        for (k, &m) in other.masses.iter().enumerate() {
            let idx = other.first_index + k as i64;
            let slot = self.ensure(idx);
            self.masses[slot] += m;
        }
    }
}

/// Coarse-grain a distribution in total energy `E(s) = sum_{j in s} eps_j`,
/// with bins starting at the lowest energy of the distribution's support.
pub fn energy_histogram(
    dist: &DiagonalDistribution,
    basis: &ModeBasis,
    bin_width: f64,
) -> Result<EnergyHistogram> {
    let origin = support_min_energy(dist.support, basis);
    histogram_on(dist, basis, BinGrid::new(origin, bin_width)?)
}

pub fn histogram_on(
    dist: &DiagonalDistribution,
    basis: &ModeBasis,
    grid: BinGrid,
) -> Result<EnergyHistogram> {
    if basis.n_modes() != dist.support.n_modes() {
        return Err(Error::Dimension("basis and distribution disagree on N".into()));
    }
    let mut h = EnergyHistogram::empty(grid);
    for (c, p) in dist.iter() {
        h.add(basis.config_energy(c.0), p);
    }
    Ok(h)
}

pub fn support_min_energy(support: Support, basis: &ModeBasis) -> f64 {
    match support {
        Support::Full { .. } => basis.full_min_energy(),
        Support::Fixed { m, .. } => basis.sector_min_energy(m),
        Support::Blocks { blocks, .. } => blocks
            .iter()
            .map(|(mask, k)| {
                // modes are sorted by energy, so the lowest come first
                FockConfig(mask).modes().take(k).map(|j| basis.energies[j]).sum::<f64>()
            })
            .sum(),
    }
}

/// Per-mode occupations `sum_s p(s) s_j` and pair moments `sum_s p(s) s_i s_j`.
pub fn enumerated_moments(dist: &DiagonalDistribution) -> (Vec<f64>, Vec<f64>) {
    let n = dist.support.n_modes();
    let mut first = vec![NeumaierSum::new(); n];
    let mut pairs = vec![NeumaierSum::new(); n * n];
    for (c, p) in dist.iter() {
        let modes: Vec<usize> = c.modes().collect();
        for &i in &modes {
            first[i].add(p);
            for &j in &modes {
                pairs[i * n + j].add(p);
            }
        }
    }
    (first.iter().map(|s| s.value()).collect(), pairs.iter().map(|s| s.value()).collect())
}

/// One-pass streamed summary of the diagonal ensemble.
#[derive(Debug, Clone)]
pub struct DeSummary {
    pub support: Support,
    pub norm: f64,
    pub entropy: f64,
    pub occupations: Vec<f64>,
    pub configs_visited: u64,
    pub histogram: Option<EnergyHistogram>,
}

struct SummaryAcc<'a> {
    basis: &'a ModeBasis,
    norm: NeumaierSum,
    entropy: NeumaierSum,
    occ: Vec<NeumaierSum>,
    visited: u64,
    hist: Option<EnergyHistogram>,
}

impl LeafVisitor for SummaryAcc<'_> {
    #[inline]
    fn visit(&mut self, leaf: &Leaf<'_>) {
        self.visited += 1;
        let p = leaf.de;
        if p <= 0.0 {
            return;
        }
        self.norm.add(p);
        self.entropy.add(-p * p.ln());
        let mut b = leaf.bits;
        let mut e = 0.0;
        while b != 0 {
            let j = b.trailing_zeros() as usize;
            self.occ[j].add(p);
            e += self.basis.energies[j];
            b &= b - 1;
        }
        if let Some(h) = &mut self.hist {
            h.add(e, p);
        }
    }

    fn wants_zero_weight(&self) -> bool {
        false
    }
}

/// Stream the diagonal ensemble once (no materialization) and reduce its
/// normalization, entropy, occupations and optionally an energy histogram.
pub fn de_summary(u: &OverlapMatrix, basis: &ModeBasis, bin_width: Option<f64>) -> Result<DeSummary> {
    let n = u.n_modes();
    let support = Support::Fixed { n, m: u.n_particles() };
    support.validate()?;
    let grid = match bin_width {
        Some(w) => Some(BinGrid::new(basis.sector_min_energy(u.n_particles()), w)?),
        None => None,
    };
    let scan = Scan::new(support).with_overlap(u);
    let acc = scan.run(
        || SummaryAcc {
            basis,
            norm: NeumaierSum::new(),
            entropy: NeumaierSum::new(),
            occ: vec![NeumaierSum::new(); n],
            visited: 0,
            hist: grid.map(EnergyHistogram::empty),
        },
        |mut a, b| {
            a.norm.merge(&b.norm);
            a.entropy.merge(&b.entropy);
            for (x, y) in a.occ.iter_mut().zip(b.occ.iter()) {
                x.merge(y);
            }
            a.visited += b.visited;
            if let (Some(h), Some(g)) = (&mut a.hist, &b.hist) {
                h.merge(g);
            }
            a
        },
    );
    Ok(DeSummary {
        support,
        norm: acc.norm.value(),
        entropy: acc.entropy.value().max(0.0),
        occupations: acc.occ.iter().map(|s| s.value()).collect(),
        configs_visited: acc.visited,
        histogram: acc.hist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::config::DEFAULT_BUDGET;
    use crate::lattice::{FermiRule, Quench, QuenchParams};

    fn quench(n: usize, j: f64) -> Quench {
        Quench::from_params(&QuenchParams::half_filled(n, j, 5), FermiRule::Error).unwrap()
    }

    #[test]
    fn null_quench_point_mass() {
        let p = QuenchParams::half_filled(10, 0.0, 5);
        let q = Quench::between(&p, &p, FermiRule::Error).unwrap();
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        assert_eq!(d.len(), 252);
        let init = FockConfig::from_modes(&[0, 1, 2, 3, 4]);
        assert!((d.prob(init) - 1.0).abs() < 1e-12);
        assert!(de_entropy(&d) < 1e-12);
        let h = energy_histogram(&d, &q.post, 1.0).unwrap();
        let nonzero: Vec<_> = h.masses.iter().filter(|&&m| m > 1e-12).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_for_small_quenches() {
        for (n, j) in [(10, 12.0), (10, 4.0)] {
            let q = quench(n, j);
            let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
            assert_eq!(d.len(), 252);
            assert!((d.total() - 1.0).abs() < 1e-12);
            assert!(d.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn entropy_of_simple_distributions() {
        assert_eq!(entropy([1.0, 0.0, 0.0]), 0.0);
        let k = 17;
        let s = entropy(std::iter::repeat(1.0 / k as f64).take(k));
        assert!((s - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn infinite_bin_width_gives_one_bin() {
        let q = quench(10, 12.0);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        let h = energy_histogram(&d, &q.post, f64::INFINITY).unwrap();
        assert_eq!(h.masses.len(), 1);
        assert!((h.masses[0] - 1.0).abs() < 1e-12);
        assert!(energy_histogram(&d, &q.post, 0.0).is_err());
        let h1 = energy_histogram(&d, &q.post, 1.0).unwrap();
        assert!((h1.total() - 1.0).abs() < 1e-8);
        assert_eq!(h1.first_index, 0);
    }

    #[test]
    fn marginals_equal_projector_diagonal() {
        let q = quench(10, 12.0);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        let (first, _) = enumerated_moments(&d);
        for j in 0..10 {
            assert!((first[j] - q.correlations.g[(j, j)]).abs() < 1e-10);
        }
    }

    #[test]
    fn streamed_summary_matches_materialized() {
        let q = quench(10, 12.0);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        let s = de_summary(&q.overlap, &q.post, Some(1.0)).unwrap();
        assert!((s.norm - 1.0).abs() < 1e-12);
        assert!((s.entropy - de_entropy(&d)).abs() < 1e-12);
        let h = energy_histogram(&d, &q.post, 1.0).unwrap();
        let hs = s.histogram.unwrap();
        for k in h.first_index..=h.last_index() {
            assert!((h.mass_at(k) - hs.mass_at(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_export_round_trips() {
        let q = quench(10, 4.0);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        let mut buf = Vec::new();
        d.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 4 + 8 + 16 * 252);
        let back = DiagonalDistribution::read_binary(&buf[..]).unwrap();
        assert_eq!(back, d);
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("config,probability\n"));
    }

    #[test]
    fn embed_into_full_space() {
        let q = quench(10, 4.0);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        let full = d.embed(Support::Full { n: 10 }).unwrap();
        assert_eq!(full.len(), 1024);
        assert!((full.total() - d.total()).abs() < 1e-15);
        assert!(full.embed(Support::Fixed { n: 10, m: 4 }).is_err());
        assert!(d.embed(Support::Full { n: 9 }).is_err());
    }
}
