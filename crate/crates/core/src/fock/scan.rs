//! Chunked depth-first enumeration of Fock configurations.
//!
//! The configuration tree branches on each mode in turn (occupied first), so
//! leaves come out in the lexicographic order of [`crate::fock::config`]. The
//! first few modes are fixed per chunk; chunks are contiguous ranges of that
//! order, are walked independently (in parallel when a thread pool is
//! available) and merged with a pairwise reduction whose shape depends only on
//! the chunk count. Results are therefore bit-identical for any thread count.
//!
//! Along the way the walker carries the prefix elimination for diagonal
//! ensemble amplitudes and any number of pairwise energy functions
//! `E(s) = sum_j lambda_j s_j + sum_{i<j} w_ij s_i s_j`.

use rayon::prelude::*;

use crate::fock::config::{Constraints, Support, NO_BLOCK};
use crate::fock::determinant::PrefixElimination;
use crate::lattice::OverlapMatrix;
use crate::sum::pairwise_reduce;

/// Pairwise energy over occupation strings.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseEnergy {
    pub lambdas: Vec<f64>,
    /// Symmetric `N x N` row-major couplings `w_ij`, zero diagonal; `None` for
    /// independent modes.
    pub pairs: Option<Vec<f64>>,
}

impl PairwiseEnergy {
    pub fn independent(lambdas: Vec<f64>) -> Self {
        PairwiseEnergy { lambdas, pairs: None }
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// Direct evaluation, used for spot checks and small enumerations.
    pub fn energy(&self, bits: u64) -> f64 {
        let n = self.lambdas.len();
        let modes: Vec<usize> = (0..n).filter(|&j| bits >> j & 1 == 1).collect();
        let mut e = 0.0;
        for (a, &j) in modes.iter().enumerate() {
            e += self.lambdas[j];
            if let Some(w) = &self.pairs {
                for &k in &modes[..a] {
                    e += w[j * n + k];
                }
            }
        }
        e
    }
}

/// One visited configuration.
#[derive(Debug, Clone, Copy)]
pub struct Leaf<'a> {
    pub bits: u64,
    /// Diagonal-ensemble probability; zero off-sector or when no overlap was given.
    pub de: f64,
    /// Values of the scan's energy functions, in the order they were supplied.
    pub energies: &'a [f64],
}

pub trait LeafVisitor: Send {
    fn visit(&mut self, leaf: &Leaf<'_>);

    /// Whether leaves with zero diagonal-ensemble weight must be visited.
    /// When `false` and no energies are requested, singular prefixes prune
    /// whole subtrees.
    fn wants_zero_weight(&self) -> bool {
        true
    }
}

/// Enumeration request: which configurations, and what to compute at each.
#[derive(Debug, Clone, Copy)]
pub struct Scan<'a> {
    pub support: Support,
    pub overlap: Option<&'a OverlapMatrix>,
    pub energies: &'a [PairwiseEnergy],
}

impl<'a> Scan<'a> {
    pub fn new(support: Support) -> Self {
        Scan { support, overlap: None, energies: &[] }
    }

    pub fn with_overlap(mut self, u: &'a OverlapMatrix) -> Self {
        self.overlap = Some(u);
        self
    }

    pub fn with_energies(mut self, energies: &'a [PairwiseEnergy]) -> Self {
        self.energies = energies;
        self
    }

    /// Number of leading modes fixed per chunk; a function of `N` only.
    pub fn split_depth(&self) -> usize {
        (self.support.n_modes() / 2).min(10)
    }

    /// Chunk prefixes (bits over the first `split_depth` modes) in enumeration order.
    pub fn chunks(&self) -> Vec<u64> {
        let k = self.split_depth();
        let n = self.support.n_modes();
        let cons = self.support.constraints();
        let mut out = Vec::new();
        prefixes(k.min(n), 0, 0, 0, &mut |bits, _| {
            if cons.prefix_feasible(bits, k) {
                out.push(bits);
            }
        });
        out
    }

    /// Walk every configuration, one fresh visitor per chunk, and merge the
    /// per-chunk visitors in a fixed pairwise order.
    pub fn run<V, F, M>(&self, make: F, merge: M) -> V
    where
        V: LeafVisitor,
        F: Fn() -> V + Sync,
        M: FnMut(V, V) -> V,
    {
        let chunks = self.chunks();
        let parts: Vec<V> = chunks
            .par_iter()
            .map(|&prefix| {
                let mut v = make();
                self.walk_chunk(prefix, &mut v);
                v
            })
            .collect();
        pairwise_reduce(parts, merge).unwrap_or_else(make)
    }

    /// Walk every configuration sequentially with a single visitor.
    pub fn run_sequential<V: LeafVisitor>(&self, visitor: &mut V) {
        for prefix in self.chunks() {
            self.walk_chunk(prefix, visitor);
        }
    }

    fn walk_chunk<V: LeafVisitor>(&self, prefix: u64, visitor: &mut V) {
        let mut w = Walker::new(self, visitor.wants_zero_weight());
        let k = self.split_depth();
        let mut d = 0;
        for j in 0..k {
            if prefix >> j & 1 == 1 {
                if !w.push(d, j) {
                    return;
                }
                w.count(j, 1);
                d += 1;
            }
        }
        w.walk(k, d, prefix, visitor);
    }
}

fn prefixes(k: usize, j: usize, bits: u64, count: usize, f: &mut dyn FnMut(u64, usize)) {
    if j == k {
        f(bits, count);
        return;
    }
    prefixes(k, j + 1, bits | 1 << j, count + 1, f);
    prefixes(k, j + 1, bits, count, f);
}

struct Walker<'s> {
    n: usize,
    m: Option<usize>,
    cons: Constraints,
    counts: Vec<usize>,
    energies: &'s [PairwiseEnergy],
    elim: Option<PrefixElimination>,
    de_particles: usize,
    /// `de_ok[d]`: the depth-`d` prefix has a valid, nonsingular elimination.
    de_ok: Vec<bool>,
    /// `e[k * (n + 1) + d]`: energy `k` of the depth-`d` prefix.
    e: Vec<f64>,
    occ: Vec<usize>,
    leaf_e: Vec<f64>,
    prune: bool,
}

impl<'s> Walker<'s> {
    fn new(scan: &Scan<'s>, wants_zero: bool) -> Self {
        let n = scan.support.n_modes();
        let elim = scan.overlap.map(PrefixElimination::new);
        let de_particles = elim.as_ref().map_or(0, |e| e.particles());
        let k = scan.energies.len();
        let mut de_ok = vec![false; n + 1];
        de_ok[0] = elim.is_some();
        let cons = scan.support.constraints();
        Walker {
            n,
            m: scan.support.particles(),
            counts: cons.counts(),
            cons,
            energies: scan.energies,
            elim,
            de_particles,
            de_ok,
            e: vec![0.0; k * (n + 1)],
            occ: vec![0; n + 1],
            leaf_e: vec![0.0; k],
            prune: !wants_zero && k == 0,
        }
    }

    /// Occupy mode `j` at include depth `d`. Returns `false` if the subtree can be skipped.
    #[inline]
    fn push(&mut self, d: usize, j: usize) -> bool {
        let n = self.n;
        for (k, model) in self.energies.iter().enumerate() {
            let base = k * (n + 1);
            let mut de = model.lambdas[j];
            if let Some(w) = &model.pairs {
                let row = &w[j * n..(j + 1) * n];
                for &o in &self.occ[..d] {
                    de += row[o];
                }
            }
            self.e[base + d + 1] = self.e[base + d] + de;
        }
        self.occ[d] = j;
        let ok = self.de_ok[d]
            && d < self.de_particles
            && self.elim.as_mut().is_some_and(|el| el.push(d, j));
        self.de_ok[d + 1] = ok;
        ok || !self.prune
    }

    #[inline]
    fn count(&mut self, j: usize, delta: isize) {
        let b = self.cons.block[j];
        if b != NO_BLOCK {
            self.counts[b] = self.counts[b].wrapping_add_signed(delta);
        }
    }

    #[inline]
    fn leaf<V: LeafVisitor>(&mut self, d: usize, bits: u64, visitor: &mut V) {
        let de = if self.de_ok[d] && d == self.de_particles {
            let a = self.elim.as_ref().map_or(0.0, |el| el.det(d));
            a * a
        } else {
            0.0
        };
        if self.prune && de == 0.0 {
            return;
        }
        let n1 = self.n + 1;
        for k in 0..self.leaf_e.len() {
            self.leaf_e[k] = self.e[k * n1 + d];
        }
        visitor.visit(&Leaf { bits, de, energies: &self.leaf_e });
    }

    fn walk<V: LeafVisitor>(&mut self, j: usize, d: usize, bits: u64, visitor: &mut V) {
        if let Some(m) = self.m {
            if d == m {
                self.leaf(d, bits, visitor);
                return;
            }
        }
        if j == self.n {
            self.leaf(d, bits, visitor);
            return;
        }
        let may_include = self.cons.may_include(j, &self.counts);
        let may_exclude = self.cons.may_exclude(j, &self.counts);
        if may_include && self.push(d, j) {
            self.count(j, 1);
            self.walk(j + 1, d + 1, bits | 1 << j, visitor);
            self.count(j, -1);
        }
        if may_exclude {
            self.walk(j + 1, d, bits, visitor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::config::{support_configs, Blocks, DEFAULT_BUDGET};
    use crate::fock::determinant::de_probability;
    use crate::fock::FockConfig;
    use crate::lattice::{FermiRule, Quench, QuenchParams};

    struct Collect(Vec<(u64, f64, Vec<f64>)>);
    impl LeafVisitor for Collect {
        fn visit(&mut self, leaf: &Leaf<'_>) {
            self.0.push((leaf.bits, leaf.de, leaf.energies.to_vec()));
        }
    }

    fn merge(mut a: Collect, b: Collect) -> Collect {
        a.0.extend(b.0);
        a
    }

    #[test]
    fn visits_support_in_enumeration_order() {
        for support in [
            Support::Fixed { n: 7, m: 3 },
            Support::Full { n: 6 },
            Support::Fixed { n: 5, m: 0 },
            Support::Fixed { n: 5, m: 5 },
            Support::Blocks {
                n: 9,
                blocks: Blocks::new(&[(0b1_0100_1001, 2), (0b0_0011_0110, 2), (0b0_1000_0000, 0)]).unwrap(),
            },
        ] {
            let got = Scan::new(support).run(|| Collect(Vec::new()), merge);
            let bits: Vec<u64> = got.0.iter().map(|x| x.0).collect();
            let want: Vec<u64> =
                support_configs(support, DEFAULT_BUDGET).unwrap().iter().map(|c| c.0).collect();
            assert_eq!(bits, want, "{support:?}");
        }
    }

    #[test]
    fn energies_and_probabilities_match_direct_evaluation() {
        let q = Quench::from_params(&QuenchParams::half_filled(10, 4.0, 5), FermiRule::Error)
            .unwrap();
        let n = 10;
        let lam: Vec<f64> = (0..n).map(|j| 0.3 * j as f64 - 1.0).collect();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = ((i * 13 + j * 7) % 5) as f64 * 0.1 - 0.2;
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        let models = vec![PairwiseEnergy::independent(lam.clone()), PairwiseEnergy {
            lambdas: lam,
            pairs: Some(w),
        }];
        for support in [Support::Fixed { n, m: 5 }, Support::Full { n }] {
            let scan = Scan::new(support).with_overlap(&q.overlap).with_energies(&models);
            let got = scan.run(|| Collect(Vec::new()), merge);
            assert_eq!(got.0.len() as u128, support.size());
            for (bits, de, e) in got.0 {
                let s = FockConfig(bits);
                assert!((de - de_probability(&q.overlap, s)).abs() < 1e-14);
                for (k, model) in models.iter().enumerate() {
                    assert!((e[k] - model.energy(bits)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pruning_skips_only_zero_weight() {
        struct Mass(f64, usize);
        impl LeafVisitor for Mass {
            fn visit(&mut self, leaf: &Leaf<'_>) {
                self.0 += leaf.de;
                self.1 += 1;
            }
            fn wants_zero_weight(&self) -> bool {
                false
            }
        }
        let p = QuenchParams::half_filled(10, 0.0, 5);
        let q = Quench::between(&p, &p, FermiRule::Error).unwrap();
        let scan = Scan::new(Support::Fixed { n: 10, m: 5 }).with_overlap(&q.overlap);
        let out = scan.run(|| Mass(0.0, 0), |a, b| Mass(a.0 + b.0, a.1 + b.1));
        assert!((out.0 - 1.0).abs() < 1e-12);
        assert!(out.1 <= 252);
    }
}
