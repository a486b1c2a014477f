//! Brute-force many-body time evolution in the fixed-particle sector.
//!
//! Amplitudes evolve as `c_s(t) = c_s(0) exp(-i E(s) t)` and observables are
//! assembled from the explicit sector state, including the off-diagonal
//! one-body elements `<a_i^dag a_j>(t)`. Used to check the time-average
//! picture of the diagonal ensemble on small systems.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::config::{binomial, enumerate_configs, FockConfig};
use crate::fock::determinant::slater_amplitude;
use crate::fock::moments::MomentTargets;
use crate::lattice::{ModeBasis, OverlapMatrix};

/// Largest sector the oracle accepts.
pub const ORACLE_MAX_CONFIGS: u128 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSnapshot {
    pub t: f64,
    pub occupations: Vec<f64>,
    /// Row-major `<n_i n_j>(t)`.
    pub pairs: Vec<f64>,
    /// Row-major `<a_i^dag a_j>(t)`.
    pub g: Vec<Complex64>,
    /// `<c_x^dag c_x>(t)` in the site basis.
    pub site_density: Vec<f64>,
}

struct Hop {
    from: usize,
    to: usize,
    i: usize,
    j: usize,
    sign: f64,
}

struct SectorState {
    n: usize,
    configs: Vec<FockConfig>,
    amp0: Vec<f64>,
    energy: Vec<f64>,
    hops: Vec<Hop>,
}

fn parity_below(bits: u64, k: usize) -> f64 {
    let mask = (1u64 << k) - 1;
    if (bits & mask).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl SectorState {
    fn new(u: &OverlapMatrix, basis: &ModeBasis) -> Result<Self> {
        let n = u.n_modes();
        let m = u.n_particles();
        let size = binomial(n, m);
        if size > ORACLE_MAX_CONFIGS {
            return Err(Error::BudgetExceeded { required: size, budget: ORACLE_MAX_CONFIGS as u64 });
        }
        let configs: Vec<FockConfig> = enumerate_configs(n, m, u64::MAX, false)?.collect();
        let index: HashMap<u64, usize> = configs.iter().enumerate().map(|(k, c)| (c.0, k)).collect();
        let amp0 = configs.iter().map(|&s| slater_amplitude(u, s)).collect();
        let energy = configs.iter().map(|s| basis.config_energy(s.0)).collect();
        let mut hops = Vec::new();
        for (from, s) in configs.iter().enumerate() {
            for j in s.modes() {
                let removed = s.0 & !(1u64 << j);
                let sj = parity_below(s.0, j);
                for i in 0..n {
                    if i == j || removed >> i & 1 == 1 {
                        continue;
                    }
                    let target = removed | 1u64 << i;
                    let sign = sj * parity_below(removed, i);
                    hops.push(Hop { from, to: index[&target], i, j, sign });
                }
            }
        }
        Ok(SectorState { n, configs, amp0, energy, hops })
    }

    fn snapshot(&self, basis: &ModeBasis, t: f64) -> OracleSnapshot {
        let n = self.n;
        let amp: Vec<Complex64> = self
            .amp0
            .iter()
            .zip(self.energy.iter())
            .map(|(&c, &e)| Complex64::from_polar(c, -e * t))
            .collect();
        let mut occupations = vec![0.0; n];
        let mut pairs = vec![0.0; n * n];
        let mut g = vec![Complex64::new(0.0, 0.0); n * n];
        for (s, a) in self.configs.iter().zip(amp.iter()) {
            let p = a.norm_sqr();
            let modes: Vec<usize> = s.modes().collect();
            for &i in &modes {
                occupations[i] += p;
                g[i * n + i] += p;
                for &j in &modes {
                    pairs[i * n + j] += p;
                }
            }
        }
        for h in &self.hops {
            // <psi| a_i^dag a_j |psi> picks up conj(c_to) c_from
            g[h.i * n + h.j] += amp[h.to].conj() * amp[h.from] * h.sign;
        }
        let w = &basis.vectors;
        let site_density = (0..n)
            .map(|x| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += w[(x, i)] * w[(x, j)] * g[i * n + j].re;
                    }
                }
                acc
            })
            .collect();
        OracleSnapshot { t, occupations, pairs, g, site_density }
    }
}

/// Instantaneous observables at each requested time.
pub fn time_evolution_oracle(
    u: &OverlapMatrix,
    basis: &ModeBasis,
    times: &[f64],
) -> Result<Vec<OracleSnapshot>> {
    let state = SectorState::new(u, basis)?;
    Ok(times.iter().map(|&t| state.snapshot(basis, t)).collect())
}

/// Outcome of comparing long-time averages with the diagonal-ensemble predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValidation {
    pub samples: usize,
    pub t_max: f64,
    /// Max deviation of time-averaged `<n_i>`, `<n_i n_j>` from the Wick targets.
    pub moment_deviation: f64,
    /// Max over `i, j, t` of `| |g_ij(t)| - |g_ij(0)| |`.
    pub amplitude_drift: f64,
    /// Max deviation of the instantaneous phase of `g_ij(t)` from `(eps_i - eps_j) t`.
    pub phase_error: f64,
    /// Max deviation of the time-averaged site density from its dephased value.
    pub site_density_deviation: f64,
    /// Max `|time average of g_ij|` over off-diagonal, non-degenerate pairs.
    pub dephasing_residual: f64,
}

/// Sample `samples` equally spaced times in `[0, t_max)` and compare time
/// averages against the dephased (diagonal-ensemble) predictions.
pub fn validate_time_average(
    u: &OverlapMatrix,
    basis: &ModeBasis,
    targets: &MomentTargets,
    t_max: f64,
    samples: usize,
) -> Result<OracleValidation> {
    if samples == 0 || !(t_max >= 0.0) {
        return Err(Error::InvalidParams("need at least one sample and t_max >= 0".into()));
    }
    let state = SectorState::new(u, basis)?;
    let n = state.n;
    let g0 = state.snapshot(basis, 0.0).g;
    let mut mean_occ = vec![0.0; n];
    let mut mean_pairs = vec![0.0; n * n];
    let mut mean_g = vec![Complex64::new(0.0, 0.0); n * n];
    let mut mean_site = vec![0.0; n];
    let mut drift: f64 = 0.0;
    let mut phase_error: f64 = 0.0;
    for k in 0..samples {
        let t = t_max * k as f64 / samples as f64;
        let snap = state.snapshot(basis, t);
        for i in 0..n {
            mean_occ[i] += snap.occupations[i];
            mean_site[i] += snap.site_density[i];
        }
        for idx in 0..n * n {
            mean_pairs[idx] += snap.pairs[idx];
            mean_g[idx] += snap.g[idx];
            drift = drift.max((snap.g[idx].norm() - g0[idx].norm()).abs());
            let (i, j) = (idx / n, idx % n);
            let predicted = g0[idx]
                * Complex64::from_polar(1.0, (basis.energies[i] - basis.energies[j]) * t);
            phase_error = phase_error.max((snap.g[idx] - predicted).norm());
        }
    }
    let inv = 1.0 / samples as f64;
    let mut moment_deviation: f64 = 0.0;
    for i in 0..n {
        moment_deviation = moment_deviation.max((mean_occ[i] * inv - targets.means[i]).abs());
        for j in 0..n {
            let idx = i * n + j;
            moment_deviation = moment_deviation.max((mean_pairs[idx] * inv - targets.pairs[idx]).abs());
        }
    }
    let w = &basis.vectors;
    let mut site_density_deviation: f64 = 0.0;
    for x in 0..n {
        let dephased: f64 = (0..n).map(|j| w[(x, j)] * w[(x, j)] * targets.means[j]).sum();
        site_density_deviation = site_density_deviation.max((mean_site[x] * inv - dephased).abs());
    }
    let scale = basis.energies.iter().fold(1.0_f64, |a, e| a.max(e.abs()));
    let mut dephasing_residual: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && (basis.energies[i] - basis.energies[j]).abs() > 1e-9 * scale {
                dephasing_residual = dephasing_residual.max((mean_g[i * n + j] * inv).norm());
            }
        }
    }
    Ok(OracleValidation {
        samples,
        t_max,
        moment_deviation,
        amplitude_drift: drift,
        phase_error,
        site_density_deviation,
        dephasing_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::moments::wick_moments;
    use crate::lattice::{FermiRule, Quench, QuenchParams};

    fn quench(j: f64) -> Quench {
        Quench::from_params(&QuenchParams::half_filled(6, j, 3), FermiRule::Error).unwrap()
    }

    #[test]
    fn initial_snapshot_matches_wick_and_projector() {
        let q = quench(12.0);
        let snap = &time_evolution_oracle(&q.overlap, &q.post, &[0.0]).unwrap()[0];
        let t = wick_moments(&q.correlations);
        for i in 0..6 {
            assert!((snap.occupations[i] - t.means[i]).abs() < 1e-12);
            for j in 0..6 {
                assert!((snap.pairs[i * 6 + j] - t.pair(i, j)).abs() < 1e-12);
                let g = snap.g[i * 6 + j];
                assert!((g.re - q.correlations.g[(i, j)]).abs() < 1e-12, "g[{i},{j}]");
                assert!(g.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phases_rotate_amplitudes_do_not() {
        let q = quench(12.0);
        let t = wick_moments(&q.correlations);
        let v = validate_time_average(&q.overlap, &q.post, &t, 50.0, 200).unwrap();
        assert!(v.amplitude_drift < 1e-9, "{v:?}");
        assert!(v.phase_error < 1e-9, "{v:?}");
        assert!(v.moment_deviation < 1e-10);
    }

    #[test]
    fn long_time_average_dephases() {
        let q = quench(4.0);
        let t = wick_moments(&q.correlations);
        let v = validate_time_average(&q.overlap, &q.post, &t, 1e4, 10_000).unwrap();
        assert!(v.moment_deviation < 2e-3);
        assert!(v.site_density_deviation < 2e-3, "{v:?}");
        assert!(v.dephasing_residual < 2e-3, "{v:?}");
    }

    #[test]
    fn null_quench_is_stationary() {
        let p = QuenchParams::half_filled(6, 0.0, 3);
        let q = Quench::between(&p, &p, FermiRule::Error).unwrap();
        let t = wick_moments(&q.correlations);
        let v = validate_time_average(&q.overlap, &q.post, &t, 1e4, 1000).unwrap();
        assert!(v.moment_deviation < 1e-12);
        assert!(v.site_density_deviation < 1e-12);
    }

    #[test]
    fn guards_large_sectors() {
        let q = Quench::from_params(&QuenchParams::half_filled(30, 4.0, 5), FermiRule::Error)
            .unwrap();
        assert!(matches!(
            time_evolution_oracle(&q.overlap, &q.post, &[0.0]),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
