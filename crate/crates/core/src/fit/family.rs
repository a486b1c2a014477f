//! Pairwise exponential family over occupation strings,
//! `p(s) = exp(-sum_j lambda_j s_j - sum_{i<j} w_ij s_i s_j) / Z`,
//! restricted to a [`Support`].
//!
//! Parameters and sufficient statistics share one flat layout: entry `j < N`
//! is mode `j`, then the pairs `i < j` in row-major upper-triangle order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::fock::config::{Constraints, Support, NO_BLOCK};
use crate::fock::moments::MomentTargets;
use crate::fock::scan::{Leaf, LeafVisitor, PairwiseEnergy, Scan};
use crate::sum::pairwise_reduce;

/// Energies more than this far below the reference trigger a rescan.
const MAX_SHIFT: f64 = 600.0;

/// Flat feature layout for `N` modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Features {
    pub n: usize,
}

impl Features {
    pub fn new(n: usize) -> Self {
        Features { n }
    }

    pub fn len(&self) -> usize {
        self.n + self.n * (self.n - 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Index of the pair feature `(i, j)`, `i != j`.
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.n + a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    /// Inverse of [`Features::pair`]; `None` for single-mode features.
    pub fn modes_of(&self, k: usize) -> Option<(usize, usize)> {
        if k < self.n {
            return None;
        }
        let mut rest = k - self.n;
        for a in 0..self.n {
            let row = self.n - a - 1;
            if rest < row {
                return Some((a, a + 1 + rest));
            }
            rest -= row;
        }
        None
    }

    pub fn to_energy(&self, theta: &[f64]) -> PairwiseEnergy {
        let n = self.n;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = theta[self.pair(i, j)];
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        PairwiseEnergy { lambdas: theta[..n].to_vec(), pairs: Some(w) }
    }

    pub fn from_energy(&self, e: &PairwiseEnergy) -> Vec<f64> {
        let n = self.n;
        let mut theta = vec![0.0; self.len()];
        theta[..n].copy_from_slice(&e.lambdas);
        if let Some(w) = &e.pairs {
            for i in 0..n {
                for j in i + 1..n {
                    theta[self.pair(i, j)] = w[i * n + j];
                }
            }
        }
        theta
    }

    /// Target statistics `t` in the flat layout.
    pub fn targets(&self, t: &MomentTargets) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; self.len()];
        out[..n].copy_from_slice(&t.means);
        for i in 0..n {
            for j in i + 1..n {
                out[self.pair(i, j)] = t.pair(i, j);
            }
        }
        out
    }
}

/// Model expectations and normalization under a given energy.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMoments {
    pub log_z: f64,
    pub means: Vec<f64>,
    /// Row-major `N x N`, diagonal equal to `means`.
    pub pairs: Vec<f64>,
    /// Lowest energy on the support.
    pub min_energy: f64,
}

impl FamilyMoments {
    pub fn targets(&self) -> MomentTargets {
        MomentTargets { means: self.means.clone(), pairs: self.pairs.clone() }
    }

    /// `<E> = sum_j lambda_j <s_j> + sum_{i<j} w_ij <s_i s_j>`.
    pub fn mean_energy(&self, energy: &PairwiseEnergy) -> f64 {
        let n = self.means.len();
        let mut e: f64 = energy.lambdas.iter().zip(&self.means).map(|(l, h)| l * h).sum();
        if let Some(w) = &energy.pairs {
            for i in 0..n {
                for j in i + 1..n {
                    e += w[i * n + j] * self.pairs[i * n + j];
                }
            }
        }
        e
    }

    /// Entropy by the exponential-family identity `S = <E> + ln Z`.
    pub fn entropy(&self, energy: &PairwiseEnergy) -> f64 {
        self.mean_energy(energy) + self.log_z
    }
}

struct Partial {
    z: f64,
    means: Vec<f64>,
    /// `pairs[j * n + o]` with `o < j`.
    pairs: Vec<f64>,
    min_e: f64,
}

impl Partial {
    fn new(n: usize) -> Self {
        Partial { z: 0.0, means: vec![0.0; n], pairs: vec![0.0; n * n], min_e: f64::INFINITY }
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.z += other.z;
        for (a, b) in self.means.iter_mut().zip(&other.means) {
            *a += b;
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            *a += b;
        }
        self.min_e = self.min_e.min(other.min_e);
        self
    }
}

/// Depth-first walk returning subtree weight sums. Including mode `j` below a
/// prefix credits the whole included subtree to `j` and to every pair `(j, o)`
/// with `o` in the prefix, so each leaf is touched once rather than `M^2` times.
struct SubtreeWalker<'a> {
    n: usize,
    m: Option<usize>,
    cons: Constraints,
    counts: Vec<usize>,
    lam: &'a [f64],
    w: Option<&'a [f64]>,
    e_ref: f64,
    occ: Vec<usize>,
    acc: Partial,
}

impl SubtreeWalker<'_> {
    #[inline]
    fn leaf(&mut self, e: f64) -> f64 {
        if e < self.acc.min_e {
            self.acc.min_e = e;
        }
        (self.e_ref - e).exp()
    }

    fn walk(&mut self, j: usize, d: usize, e: f64) -> f64 {
        if self.m == Some(d) || j == self.n {
            return self.leaf(e);
        }
        let n = self.n;
        let may_include = self.cons.may_include(j, &self.counts);
        let may_exclude = self.cons.may_exclude(j, &self.counts);
        let b = self.cons.block[j];
        let mut total = 0.0;
        if may_include {
            let mut de = self.lam[j];
            if let Some(w) = self.w {
                let row = &w[j * n..(j + 1) * n];
                for &o in &self.occ[..d] {
                    de += row[o];
                }
            }
            self.occ[d] = j;
            if b != NO_BLOCK {
                self.counts[b] += 1;
            }
            let s = self.walk(j + 1, d + 1, e + de);
            if b != NO_BLOCK {
                self.counts[b] -= 1;
            }
            self.acc.means[j] += s;
            let row = &mut self.acc.pairs[j * n..(j + 1) * n];
            for &o in &self.occ[..d] {
                row[o] += s;
            }
            total += s;
        }
        if may_exclude {
            total += self.walk(j + 1, d, e);
        }
        total
    }
}

fn chunk_partial(support: Support, energy: &PairwiseEnergy, e_ref: f64, k: usize, prefix: u64) -> Partial {
    let n = support.n_modes();
    let cons = support.constraints();
    let mut walker = SubtreeWalker {
        n,
        m: support.particles(),
        counts: cons.counts(),
        cons,
        lam: &energy.lambdas,
        w: energy.pairs.as_deref(),
        e_ref,
        occ: vec![0; n + 1],
        acc: Partial::new(n),
    };
    let mut d = 0;
    let mut e = 0.0;
    for j in 0..k {
        if prefix >> j & 1 == 1 {
            e += energy.lambdas[j];
            if let Some(w) = &energy.pairs {
                for &o in &walker.occ[..d] {
                    e += w[j * n + o];
                }
            }
            walker.occ[d] = j;
            if walker.cons.block[j] != NO_BLOCK {
                walker.counts[walker.cons.block[j]] += 1;
            }
            d += 1;
        }
    }
    let total = walker.walk(k, d, e);
    let fixed: Vec<usize> = walker.occ[..d].to_vec();
    let mut acc = walker.acc;
    acc.z = total;
    for (a, &j) in fixed.iter().enumerate() {
        acc.means[j] += total;
        for &o in &fixed[..a] {
            acc.pairs[j * n + o] += total;
        }
    }
    acc
}

fn reduce_partials(support: Support, energy: &PairwiseEnergy, e_ref: f64) -> Partial {
    let scan = Scan::new(support);
    let k = scan.split_depth();
    let n = support.n_modes();
    let parts: Vec<Partial> = scan
        .chunks()
        .par_iter()
        .map(|&prefix| chunk_partial(support, energy, e_ref, k, prefix))
        .collect();
    pairwise_reduce(parts, Partial::merge).unwrap_or_else(|| Partial::new(n))
}

/// Greedy single-flip (or pair-swap in a sector) descent, used as an energy
/// reference so that Boltzmann weights stay in floating-point range.
pub fn greedy_min_energy(support: Support, energy: &PairwiseEnergy) -> f64 {
    let n = support.n_modes();
    let mut bits: u64 = match support {
        Support::Full { .. } => (0..n).filter(|&j| energy.lambdas[j] < 0.0).fold(0, |b, j| b | 1 << j),
        _ => {
            // lowest multipliers first, as many as each block takes
            let cons = support.constraints();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| energy.lambdas[a].total_cmp(&energy.lambdas[b]));
            let mut counts = cons.counts();
            let mut bits = 0u64;
            for j in order {
                let b = cons.block[j];
                if counts[b] < cons.need[b] {
                    counts[b] += 1;
                    bits |= 1 << j;
                }
            }
            bits
        }
    };
    let mut e = energy.energy(bits);
    for _ in 0..100 * n.max(1) {
        let mut best = (e, bits);
        match support.particles() {
            None => {
                for j in 0..n {
                    let c = bits ^ 1 << j;
                    let ec = energy.energy(c);
                    if ec < best.0 {
                        best = (ec, c);
                    }
                }
            }
            Some(_) => {
                for i in (0..n).filter(|&i| bits >> i & 1 == 1) {
                    for j in (0..n).filter(|&j| bits >> j & 1 == 0 && support.same_block(i, j)) {
                        let c = bits ^ (1 << i) ^ (1 << j);
                        let ec = energy.energy(c);
                        if ec < best.0 {
                            best = (ec, c);
                        }
                    }
                }
            }
        }
        if best.1 == bits {
            break;
        }
        (e, bits) = best;
    }
    e
}

/// Normalization and first and second moments by exhaustive enumeration.
///
/// `e_ref` is a guess for the minimum energy; the scan is repeated once with
/// the exact minimum if the guess was far off.
pub fn family_moments(support: Support, energy: &PairwiseEnergy, e_ref: f64) -> FamilyMoments {
    let n = support.n_modes();
    let mut e_ref = e_ref;
    let mut acc = reduce_partials(support, energy, e_ref);
    if !(acc.z.is_finite() && acc.z > 0.0) || e_ref - acc.min_e > MAX_SHIFT {
        e_ref = acc.min_e;
        acc = reduce_partials(support, energy, e_ref);
    }
    let inv = 1.0 / acc.z;
    let means: Vec<f64> = acc.means.iter().map(|x| x * inv).collect();
    let mut pairs = vec![0.0; n * n];
    for j in 0..n {
        pairs[j * n + j] = means[j];
        for o in 0..j {
            let v = acc.pairs[j * n + o] * inv;
            pairs[j * n + o] = v;
            pairs[o * n + j] = v;
        }
    }
    FamilyMoments { log_z: acc.z.ln() - e_ref, means, pairs, min_energy: acc.min_e }
}

/// Moments plus the full feature covariance (the Hessian of `ln Z`).
#[derive(Debug, Clone)]
pub struct FamilyCurvature {
    pub moments: FamilyMoments,
    /// Feature expectations in the flat layout.
    pub expectations: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

struct CovAcc {
    feats: Features,
    e_ref: f64,
    z: f64,
    first: Vec<f64>,
    /// Lower triangle of the raw second moments, row-major `P x P`.
    second: Vec<f64>,
    active: Vec<usize>,
    min_e: f64,
}

impl LeafVisitor for CovAcc {
    fn visit(&mut self, leaf: &Leaf<'_>) {
        let e = leaf.energies[0];
        self.min_e = self.min_e.min(e);
        let w = (self.e_ref - e).exp();
        self.z += w;
        self.active.clear();
        let mut b = leaf.bits;
        while b != 0 {
            self.active.push(b.trailing_zeros() as usize);
            b &= b - 1;
        }
        let modes = self.active.len();
        for x in 0..modes {
            for y in 0..x {
                let k = self.feats.pair(self.active[y], self.active[x]);
                self.active.push(k);
            }
        }
        self.active.sort_unstable();
        let p = self.feats.len();
        for (x, &a) in self.active.iter().enumerate() {
            self.first[a] += w;
            let row = &mut self.second[a * p..];
            for &b in &self.active[..=x] {
                row[b] += w;
            }
        }
    }
}

/// Exhaustive curvature pass; intended for small `N` (the cost is `P^2` per leaf in the worst case).
pub fn family_curvature(support: Support, energy: &PairwiseEnergy, e_ref: f64) -> FamilyCurvature {
    let feats = Features::new(support.n_modes());
    let energies = [energy.clone()];
    let run = |e_ref: f64| {
        let p = feats.len();
        let scan = Scan::new(support).with_energies(&energies);
        scan.run(
            || CovAcc {
                feats,
                e_ref,
                z: 0.0,
                first: vec![0.0; p],
                second: vec![0.0; p * p],
                active: Vec::with_capacity(p),
                min_e: f64::INFINITY,
            },
            |mut a, b| {
                a.z += b.z;
                for (x, y) in a.first.iter_mut().zip(&b.first) {
                    *x += y;
                }
                for (x, y) in a.second.iter_mut().zip(&b.second) {
                    *x += y;
                }
                a.min_e = a.min_e.min(b.min_e);
                a
            },
        )
    };
    let mut e_ref = e_ref;
    let mut acc = run(e_ref);
    if !(acc.z.is_finite() && acc.z > 0.0) || e_ref - acc.min_e > MAX_SHIFT {
        e_ref = acc.min_e;
        acc = run(e_ref);
    }
    let n = feats.n;
    let p = feats.len();
    let inv = 1.0 / acc.z;
    let mean: Vec<f64> = acc.first.iter().map(|x| x * inv).collect();
    let mut cov = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let c = acc.second[a * p + b] * inv - mean[a] * mean[b];
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }
    let mut pairs = vec![0.0; n * n];
    for i in 0..n {
        pairs[i * n + i] = mean[i];
        for j in i + 1..n {
            let v = mean[feats.pair(i, j)];
            pairs[i * n + j] = v;
            pairs[j * n + i] = v;
        }
    }
    FamilyCurvature {
        moments: FamilyMoments {
            log_z: acc.z.ln() - e_ref,
            means: mean[..n].to_vec(),
            pairs,
            min_energy: acc.min_e,
        },
        expectations: mean,
        covariance: cov,
    }
}

/// Solve `H x = g` with the Moore-Penrose pseudo-inverse, discarding
/// eigen-directions below `rel_cutoff` times the largest eigenvalue.
pub fn pseudo_solve(h: &DMatrix<f64>, g: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
    let eig = h.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let cut = rel_cutoff * top;
    let coeffs = eig.eigenvectors.transpose() * g;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(&c, &l)| if l > cut { c / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::config::{support_configs, Blocks, DEFAULT_BUDGET};

    fn random_energy(n: usize, seed: u64) -> PairwiseEnergy {
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        let lam: Vec<f64> = (0..n).map(|_| 2.0 * next()).collect();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = next();
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        PairwiseEnergy { lambdas: lam, pairs: Some(w) }
    }

    fn brute(support: Support, e: &PairwiseEnergy) -> (f64, Vec<f64>, Vec<f64>) {
        let n = support.n_modes();
        let configs = support_configs(support, DEFAULT_BUDGET).unwrap();
        let weights: Vec<f64> = configs.iter().map(|c| (-e.energy(c.0)).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut means = vec![0.0; n];
        let mut pairs = vec![0.0; n * n];
        for (c, w) in configs.iter().zip(&weights) {
            for i in c.modes() {
                means[i] += w / z;
                for j in c.modes() {
                    pairs[i * n + j] += w / z;
                }
            }
        }
        (z.ln(), means, pairs)
    }

    #[test]
    fn feature_layout_round_trips() {
        let f = Features::new(7);
        assert_eq!(f.len(), 28);
        let mut seen = vec![false; f.len()];
        for i in 0..7 {
            for j in i + 1..7 {
                let k = f.pair(i, j);
                assert_eq!(k, f.pair(j, i));
                assert_eq!(f.modes_of(k), Some((i, j)));
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
        assert!(seen[7..].iter().all(|&s| s));
        let e = random_energy(7, 3);
        assert_eq!(f.to_energy(&f.from_energy(&e)), e);
    }

    #[test]
    fn subtree_moments_match_brute_force() {
        for (support, seed) in [
            (Support::Full { n: 9 }, 1),
            (Support::Fixed { n: 10, m: 4 }, 2),
            (Support::Fixed { n: 8, m: 8 }, 3),
            (Support::Full { n: 1 }, 4),
            (blocks(), 6),
        ] {
            let e = random_energy(support.n_modes(), seed);
            let got = family_moments(support, &e, 0.0);
            let (lz, means, pairs) = brute(support, &e);
            assert!((got.log_z - lz).abs() < 1e-12, "{support:?}");
            for k in 0..means.len() {
                assert!((got.means[k] - means[k]).abs() < 1e-12);
            }
            for k in 0..pairs.len() {
                assert!((got.pairs[k] - pairs[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curvature_matches_moments_and_finite_differences() {
        for support in [Support::Fixed { n: 7, m: 3 }, blocks7()] {
            curvature_case(support);
        }
    }

    fn blocks() -> Support {
        let b = Blocks::new(&[(0b00_0100_1011, 2), (0b10_1011_0100, 3), (0b01_0000_0000, 1)]).unwrap();
        Support::Blocks { n: 10, blocks: b }
    }

    fn blocks7() -> Support {
        Support::Blocks { n: 7, blocks: Blocks::new(&[(0b101_0011, 2), (0b010_1100, 1)]).unwrap() }
    }

    fn curvature_case(support: Support) {
        let e = random_energy(7, 9);
        let feats = Features::new(7);
        let c = family_curvature(support, &e, 0.0);
        let m = family_moments(support, &e, 0.0);
        assert!((c.moments.log_z - m.log_z).abs() < 1e-12);
        for k in 0..49 {
            assert!((c.moments.pairs[k] - m.pairs[k]).abs() < 1e-12);
        }
        // d<f_a>/d theta_b = -Cov(f_a, f_b)
        let theta = feats.from_energy(&e);
        let h = 1e-6;
        for b in [0, 3, feats.pair(1, 5), feats.pair(0, 6)] {
            let mut tp = theta.clone();
            tp[b] += h;
            let mut tm = theta.clone();
            tm[b] -= h;
            let cp = family_curvature(support, &feats.to_energy(&tp), 0.0).expectations;
            let cm = family_curvature(support, &feats.to_energy(&tm), 0.0).expectations;
            for a in 0..feats.len() {
                let fd = -(cp[a] - cm[a]) / (2.0 * h);
                assert!((fd - c.covariance[(a, b)]).abs() < 1e-7, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn bad_reference_energy_is_recovered() {
        // a uniform lambda shift in a sector only moves ln Z
        let support = Support::Fixed { n: 8, m: 3 };
        let e = random_energy(8, 5);
        let mut shifted = e.clone();
        for l in shifted.lambdas.iter_mut() {
            *l -= 400.0;
        }
        let base = family_moments(support, &e, 0.0);
        for guess in [5000.0, -5000.0, 0.0] {
            let got = family_moments(support, &shifted, guess);
            assert!((got.log_z - base.log_z - 1200.0).abs() < 1e-9, "guess {guess}");
            for k in 0..64 {
                assert!((got.pairs[k] - base.pairs[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn greedy_is_a_local_minimum() {
        let e = random_energy(10, 11);
        for support in [Support::Full { n: 10 }, Support::Fixed { n: 10, m: 5 }, blocks()] {
            let g = greedy_min_energy(support, &e);
            let exact = support_configs(support, DEFAULT_BUDGET)
                .unwrap()
                .iter()
                .map(|c| e.energy(c.0))
                .fold(f64::INFINITY, f64::min);
            assert!(g >= exact - 1e-12);
            let m = family_moments(support, &e, g);
            assert!((m.min_energy - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudo_solve_ignores_null_space() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = DVector::from_vec(vec![2.0, 2.0]);
        let x = pseudo_solve(&h, &g, 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
