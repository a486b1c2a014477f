//! First and second occupation moments of the diagonal ensemble.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fock::config::Blocks;
use crate::fock::distribution::{enumerated_moments, DiagonalDistribution};
use crate::lattice::CorrelationMatrix;

/// Targets every fitted ensemble must reproduce: `h_j = <n_j>` and
/// `C_ij = <n_i n_j>` (with `C_ii = h_i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTargets {
    pub means: Vec<f64>,
    /// Row-major `N x N`.
    pub pairs: Vec<f64>,
}

impl MomentTargets {
    pub fn n_modes(&self) -> usize {
        self.means.len()
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pairs[i * self.means.len() + j]
    }

    pub fn pair_matrix(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        DMatrix::from_row_slice(n, n, &self.pairs)
    }

    /// Targets of a product measure with the given occupations.
    pub fn independent(means: Vec<f64>) -> Self {
        let n = means.len();
        let mut pairs = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                pairs[i * n + j] = if i == j { means[i] } else { means[i] * means[j] };
            }
        }
        MomentTargets { means, pairs }
    }

    pub fn from_distribution(dist: &DiagonalDistribution) -> Self {
        let (means, pairs) = enumerated_moments(dist);
        MomentTargets { means, pairs }
    }

    pub fn total_particles(&self) -> f64 {
        self.means.iter().sum()
    }

    /// Violations of the elementary realizability conditions; empty if none.
    ///
    /// `particles` additionally checks the fixed-number sum rules.
    pub fn realizability_issues(&self, particles: Option<usize>) -> Vec<String> {
        let n = self.n_modes();
        let mut out = Vec::new();
        if self.pairs.len() != n * n {
            out.push(format!("pair matrix has {} entries, expected {}", self.pairs.len(), n * n));
            return out;
        }
        for (j, &h) in self.means.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-12).contains(&h) {
                out.push(format!("occupation h[{j}] = {h} outside [0, 1]"));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let c = self.pair(i, j);
                if (c - self.pair(j, i)).abs() > 1e-12 {
                    out.push(format!("pair moment ({i},{j}) not symmetric"));
                }
                if i != j {
                    let hi = self.means[i];
                    let hj = self.means[j];
                    if c < -1e-12 || c > hi.min(hj) + 1e-12 {
                        out.push(format!("C[{i},{j}] = {c} outside [0, min(h_i, h_j)]"));
                    }
                    if c < hi + hj - 1.0 - 1e-12 {
                        out.push(format!("C[{i},{j}] = {c} below h_i + h_j - 1"));
                    }
                } else if (c - self.means[i]).abs() > 1e-12 {
                    out.push(format!("C[{i},{i}] differs from h[{i}]"));
                }
            }
        }
        if let Some(m) = particles {
            let m = m as f64;
            if (self.total_particles() - m).abs() > 1e-10 {
                out.push(format!("sum of occupations {} differs from M = {m}", self.total_particles()));
            }
            let total: f64 = self.pairs.iter().sum();
            if (total - m * m).abs() > 1e-8 {
                out.push(format!("sum of pair moments {total} differs from M^2 = {}", m * m));
            }
        }
        out
    }
}

/// Occupation covariance eigenvalues below this count as exact zeros.
pub const NULL_EIGENVALUE: f64 = 1e-10;

/// Linear conservation laws visible in a set of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Conservation {
    /// Partition into blocks of fixed particle number, when the laws take that form.
    pub blocks: Option<Blocks>,
    /// Dimension of the null space of the occupation covariance.
    pub nullity: usize,
    /// Null directions that are not block particle numbers.
    pub unexplained: usize,
}

impl MomentTargets {
    /// Occupation covariance `C_ij - h_i h_j`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        DMatrix::from_fn(n, n, |i, j| self.pair(i, j) - self.means[i] * self.means[j])
    }

    /// Find modes sets `A` with `Var(sum_{j in A} n_j) = 0`.
    ///
    /// A zero-variance combination `a . n` is constant on every configuration
    /// the targets can come from. When the null space of the covariance is
    /// spanned by indicators of disjoint mode sets, those sets (plus, with a
    /// fixed total `particles`, the remaining modes) form a [`Blocks`]
    /// partition. Returns `blocks: None` if some mode is left without a
    /// particle count, e.g. on the full space when the total is not conserved.
    pub fn conservation(&self, particles: Option<usize>) -> Conservation {
        let n = self.n_modes();
        let cov = self.covariance();
        let eig = cov.clone().symmetric_eigen();
        let null: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] < NULL_EIGENVALUE).collect();
        let nullity = null.len();
        let none = Conservation { blocks: None, nullity, unexplained: nullity };
        if nullity == 0 || n > 64 {
            return none;
        }
        let v = eig.eigenvectors.select_columns(null.iter());
        let proj = &v * v.transpose();
        // modes linked through the null-space projector
        let mut label: Vec<usize> = (0..n).collect();
        fn root(label: &mut [usize], mut i: usize) -> usize {
            while label[i] != i {
                label[i] = label[label[i]];
                i = label[i];
            }
            i
        }
        for i in 0..n {
            for j in 0..i {
                if proj[(i, j)].abs() > 1e-6 {
                    let (a, b) = (root(&mut label, i), root(&mut label, j));
                    label[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<u64> = Vec::new();
        let mut rest = 0u64;
        for i in 0..n {
            if proj[(i, i)] < 1e-6 {
                rest |= 1 << i;
                continue;
            }
            let r = root(&mut label, i);
            match groups.iter_mut().find(|g| **g >> r & 1 == 1) {
                Some(g) => *g |= 1 << i,
                None => groups.push(1 << i | 1 << r),
            }
        }
        let mut blocks = Vec::new();
        for &g in &groups {
            let ones = DVector::from_fn(n, |i, _| (g >> i & 1) as f64);
            let var = (ones.transpose() * &cov * &ones)[(0, 0)];
            let k: f64 = (0..n).filter(|&i| g >> i & 1 == 1).map(|i| self.means[i]).sum();
            if var.abs() < 1e-8 && (k - k.round()).abs() < 1e-6 {
                blocks.push((g, k.round() as usize));
            } else {
                rest |= g;
            }
        }
        let unexplained = nullity.saturating_sub(blocks.len());
        if rest != 0 {
            let Some(m) = particles else {
                return Conservation { unexplained, ..none };
            };
            let placed: usize = blocks.iter().map(|b| b.1).sum();
            if placed > m || m - placed > rest.count_ones() as usize {
                return Conservation { unexplained, ..none };
            }
            blocks.push((rest, m - placed));
        }
        if let Some(m) = particles {
            if blocks.iter().map(|b| b.1).sum::<usize>() != m {
                return Conservation { unexplained, ..none };
            }
        }
        Conservation { blocks: Blocks::new(&blocks).ok(), nullity, unexplained }
    }
}

/// Moments of the diagonal ensemble of a Slater determinant by Wick's theorem:
/// `<n_i n_j> = g_ii g_jj - g_ij^2` for `i != j`.
pub fn wick_moments(g: &CorrelationMatrix) -> MomentTargets {
    let n = g.g.nrows();
    let means: Vec<f64> = (0..n).map(|j| g.g[(j, j)]).collect();
    let mut pairs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pairs[i * n + j] = if i == j {
                means[i]
            } else {
                let gij = g.g[(i, j)];
                means[i] * means[j] - gij * gij
            };
        }
    }
    MomentTargets { means, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::config::{Support, DEFAULT_BUDGET};
    use crate::fock::distribution::de_distribution;
    use crate::lattice::{Boundary, FermiRule, Quench, QuenchParams};

    #[test]
    fn null_quench_factorizes() {
        let p = QuenchParams::half_filled(10, 0.0, 5);
        let q = Quench::between(&p, &p, FermiRule::Error).unwrap();
        let t = wick_moments(&q.correlations);
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!((t.pair(i, j) - t.means[i] * t.means[j]).abs() < 1e-24);
                }
            }
        }
    }

    #[test]
    fn sum_rules_hold() {
        for (n, j) in [(10, 4.0), (30, 12.0), (10, 12.0)] {
            let q = Quench::from_params(&QuenchParams::half_filled(n, j, 5), FermiRule::Error)
                .unwrap();
            let t = wick_moments(&q.correlations);
            let issues = t.realizability_issues(Some(n / 2));
            assert!(issues.is_empty(), "{issues:?}");
        }
    }

    #[test]
    fn matches_enumeration_n8() {
        // 8 sites: open chain keeps the J = 0 ground state unique at half filling
        let p = QuenchParams {
            n_sites: 8,
            hopping: 1.0,
            potential_strength: 12.0,
            period: 5,
            n_particles: 4,
            boundary: Boundary::Open,
        };
        let q = Quench::from_params(&p, FermiRule::Error).unwrap();
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        assert_eq!(d.len(), 70);
        let brute = MomentTargets::from_distribution(&d);
        let wick = wick_moments(&q.correlations);
        for k in 0..64 {
            assert!((brute.pairs[k] - wick.pairs[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn flags_unrealizable_targets() {
        let mut t = MomentTargets::independent(vec![0.5, 0.5]);
        assert!(t.realizability_issues(None).is_empty());
        // product measure has particle-number fluctuations
        assert!(!t.realizability_issues(Some(1)).is_empty());
        t.pairs[1] = 0.9;
        t.pairs[2] = 0.9;
        assert!(!t.realizability_issues(None).is_empty());
    }

    #[test]
    fn conserved_blocks_hold_all_diagonal_mass() {
        for j in [4.0, 12.0] {
            let q = Quench::from_params(&QuenchParams::half_filled(10, j, 5), FermiRule::Error).unwrap();
            let t = wick_moments(&q.correlations);
            let c = t.conservation(Some(5));
            assert_eq!(c.unexplained, 0);
            let blocks = c.blocks.expect("block structure");
            assert!(blocks.len() > 1);
            let support = Support::Blocks { n: 10, blocks };
            support.validate().unwrap();
            let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
            let inside: f64 = d.iter().filter(|(c, _)| support.contains(*c)).map(|(_, p)| p).sum();
            assert!((inside - 1.0).abs() < 1e-12, "J={j}: {inside}");
            assert!(support.size() < 252);
            // the full-space request finds the same partition
            assert_eq!(t.conservation(None).blocks, Some(blocks));
        }
    }

    #[test]
    fn independent_targets_conserve_nothing() {
        let t = MomentTargets::independent(vec![0.2, 0.5, 0.7]);
        let c = t.conservation(None);
        assert_eq!((c.blocks, c.nullity), (None, 0));
    }
}
