//! Slater-determinant amplitudes of Fock configurations.
//!
//! The amplitude of configuration `s` in the quenched state is `det(U_S)`,
//! the minor of the overlap matrix built from the rows of the occupied modes
//! (ascending). Two evaluation paths exist: a self-contained LU with partial
//! pivoting per configuration, and [`PrefixElimination`], which shares the
//! elimination work between configurations with a common prefix of occupied
//! modes during a depth-first enumeration.

use crate::fock::config::FockConfig;
use crate::lattice::OverlapMatrix;

/// Determinant of a dense `m x m` row-major matrix, destroyed in the process.
pub fn lu_determinant(a: &mut [f64], m: usize) -> f64 {
    debug_assert_eq!(a.len(), m * m);
    let mut det = 1.0;
    for k in 0..m {
        let mut piv = k;
        let mut best = a[k * m + k].abs();
        for r in k + 1..m {
            let v = a[r * m + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != k {
            for c in 0..m {
                a.swap(k * m + c, piv * m + c);
            }
            det = -det;
        }
        let p = a[k * m + k];
        det *= p;
        for r in k + 1..m {
            let f = a[r * m + k] / p;
            if f != 0.0 {
                for c in k + 1..m {
                    a[r * m + c] -= f * a[k * m + c];
                }
            }
        }
    }
    det
}

/// Signed amplitude `<s|psi>` of a configuration; zero outside the sector.
pub fn slater_amplitude(u: &OverlapMatrix, s: FockConfig) -> f64 {
    let m = u.n_particles();
    if s.count() != m || (u.n_modes() < 64 && s.bits() >> u.n_modes() != 0) {
        return 0.0;
    }
    let mut a = Vec::with_capacity(m * m);
    for j in s.modes() {
        a.extend(u.u.row(j).iter());
    }
    lu_determinant(&mut a, m)
}

/// Diagonal-ensemble weight `|det U_S|^2` of a single configuration.
pub fn de_probability(u: &OverlapMatrix, s: FockConfig) -> f64 {
    let a = slater_amplitude(u, s);
    a * a
}

/// Column-pivoted elimination of a growing set of rows of `U`.
///
/// At include depth `d` the state holds, for each of the `m - d` columns not
/// yet used as a pivot, the linear functional mapping a raw row to its entry
/// in that column after elimination against the `d` rows chosen so far. Adding
/// a row costs `O(m (m - d))` and the last row of a configuration `O(m)`, so a
/// full enumeration in prefix order spends `O(m)` per leaf on average.
#[derive(Debug, Clone)]
pub struct PrefixElimination {
    m: usize,
    rows: Vec<f64>,
    /// `basis[d]` is `m x (m - d)`, column-major.
    basis: Vec<Vec<f64>>,
    det: Vec<f64>,
    reduced: Vec<f64>,
}

impl PrefixElimination {
    pub fn new(u: &OverlapMatrix) -> Self {
        let m = u.n_particles();
        let n = u.n_modes();
        let mut rows = Vec::with_capacity(n * m);
        for j in 0..n {
            rows.extend(u.u.row(j).iter());
        }
        let mut basis: Vec<Vec<f64>> = (0..m).map(|d| vec![0.0; m * (m - d)]).collect();
        if m > 0 {
            for c in 0..m {
                basis[0][c * m + c] = 1.0;
            }
        }
        let mut det = vec![0.0; m + 1];
        det[0] = 1.0;
        PrefixElimination { m, rows, basis, det, reduced: vec![0.0; m.max(1)] }
    }

    pub fn particles(&self) -> usize {
        self.m
    }

    /// Add the row of mode `j` on top of a valid depth-`d` state.
    ///
    /// Returns `false` when the extended set of rows is linearly dependent, in
    /// which case every configuration containing this prefix has amplitude 0.
    #[inline]
    pub fn push(&mut self, d: usize, j: usize) -> bool {
        let m = self.m;
        debug_assert!(d < m);
        let free = m - d;
        let row = &self.rows[j * m..(j + 1) * m];
        let cur = &self.basis[d];
        let mut piv = 0;
        let mut best = -1.0;
        for c in 0..free {
            let col = &cur[c * m..(c + 1) * m];
            let mut y = 0.0;
            for r in 0..m {
                y += row[r] * col[r];
            }
            self.reduced[c] = y;
            if y.abs() > best {
                best = y.abs();
                piv = c;
            }
        }
        let yp = self.reduced[piv];
        if yp == 0.0 {
            return false;
        }
        self.det[d + 1] = self.det[d] * yp;
        if d + 1 < m {
            let (lo, hi) = self.basis.split_at_mut(d + 1);
            let cur = &lo[d];
            let next = &mut hi[0];
            let pcol = &cur[piv * m..(piv + 1) * m];
            let mut out = 0;
            for c in 0..free {
                if c == piv {
                    continue;
                }
                let f = self.reduced[c] / yp;
                let src = &cur[c * m..(c + 1) * m];
                let dst = &mut next[out * m..(out + 1) * m];
                for r in 0..m {
                    dst[r] = src[r] - f * pcol[r];
                }
                out += 1;
            }
        }
        true
    }

    /// Product of pivots for the current depth-`d` prefix (the amplitude up to sign when `d = m`).
    #[inline]
    pub fn det(&self, d: usize) -> f64 {
        self.det[d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::config::{enumerate_configs, DEFAULT_BUDGET};
    use crate::lattice::{FermiRule, Quench, QuenchParams};
    use nalgebra::DMatrix;

    #[test]
    fn lu_matches_known_determinants() {
        let mut a = vec![2.0, 0.0, 0.0, 3.0];
        assert_eq!(lu_determinant(&mut a, 2), 6.0);
        let mut b = vec![0.0, 1.0, 1.0, 0.0];
        assert_eq!(lu_determinant(&mut b, 2), -1.0);
        let mut c = vec![1.0, 2.0, 2.0, 4.0];
        assert_eq!(lu_determinant(&mut c, 2), 0.0);
        let mut e: Vec<f64> = vec![];
        assert_eq!(lu_determinant(&mut e, 0), 1.0);
    }

    #[test]
    fn lu_agrees_with_nalgebra() {
        let m = DMatrix::from_fn(5, 5, |r, c| ((r * 7 + c * 3) % 11) as f64 - 4.5 + 0.1 * r as f64);
        let mut a: Vec<f64> = (0..25).map(|k| m[(k / 5, k % 5)]).collect();
        let ours = lu_determinant(&mut a, 5);
        assert!((ours - m.determinant()).abs() < 1e-9 * m.determinant().abs().max(1.0));
    }

    #[test]
    fn null_quench_is_point_mass() {
        let p = QuenchParams::half_filled(10, 0.0, 5);
        let q = Quench::between(&p, &p, FermiRule::Error).unwrap();
        let init = FockConfig::from_modes(&[0, 1, 2, 3, 4]);
        assert!((de_probability(&q.overlap, init) - 1.0).abs() < 1e-12);
        for s in enumerate_configs(10, 5, DEFAULT_BUDGET, false).unwrap() {
            if s != init {
                assert!(de_probability(&q.overlap, s) < 1e-24);
            }
        }
    }

    #[test]
    fn prefix_elimination_matches_lu() {
        let q = Quench::from_params(&QuenchParams::half_filled(10, 12.0, 5), FermiRule::Error)
            .unwrap();
        let mut el = PrefixElimination::new(&q.overlap);
        for s in enumerate_configs(10, 5, DEFAULT_BUDGET, false).unwrap() {
            let modes: Vec<usize> = s.modes().collect();
            let mut ok = true;
            for (d, &j) in modes.iter().enumerate() {
                if !el.push(d, j) {
                    ok = false;
                    break;
                }
            }
            let fast = if ok { el.det(5).powi(2) } else { 0.0 };
            let slow = de_probability(&q.overlap, s);
            assert!((fast - slow).abs() < 1e-14, "{s:?}: {fast} vs {slow}");
        }
    }

    #[test]
    fn off_sector_amplitude_is_zero() {
        let q = Quench::from_params(&QuenchParams::half_filled(10, 4.0, 5), FermiRule::Error)
            .unwrap();
        assert_eq!(slater_amplitude(&q.overlap, FockConfig(0b111)), 0.0);
    }
}
