//! Grand-canonical ensemble: Fermi-Dirac occupations at a temperature and
//! chemical potential fixed by the mean energy and particle number.
//!
//! Solved in `(beta, nu = beta mu)` so that infinite temperature is regular:
//! for fixed `beta` the particle number is monotone in `nu` (bisection), the
//! energy along that curve is monotone in `beta` (bisection again), and a few
//! 2D Newton steps polish the pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::gge::fermi;
use crate::fit::LAMBDA_CLAMP;
use crate::lattice::ModeBasis;

/// Residual bound on both constraints.
pub const GCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GceModel {
    pub beta: f64,
    pub mu: f64,
    /// Zero-temperature limit (`beta -> +inf`) or its mirror (`beta -> -inf`):
    /// the target sits on the edge of the attainable energy window. `beta`
    /// then holds the sign only.
    pub saturated: bool,
    pub residual_particles: f64,
    pub residual_energy: f64,
    /// Mode multipliers `beta (eps_j - mu)`.
    pub lambdas: Vec<f64>,
}

struct Problem<'a> {
    eps: &'a [f64],
    m: f64,
    e: f64,
}

impl Problem<'_> {
    fn sums(&self, beta: f64, nu: f64) -> (f64, f64) {
        let mut n = 0.0;
        let mut e = 0.0;
        for &x in self.eps {
            let f = fermi(beta * x - nu);
            n += f;
            e += x * f;
        }
        (n, e)
    }

    fn nu_for(&self, beta: f64) -> f64 {
        let (lo_e, hi_e) = self
            .eps
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(beta * x), b.max(beta * x)));
        let mut lo = lo_e - 800.0;
        let mut hi = hi_e + 800.0;
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.sums(beta, mid).0 < self.m {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn energy_at(&self, beta: f64) -> f64 {
        self.sums(beta, self.nu_for(beta)).1
    }

    fn residual(&self, beta: f64, nu: f64) -> (f64, f64) {
        let (n, e) = self.sums(beta, nu);
        (n - self.m, e - self.e)
    }

    fn newton(&self, mut beta: f64, mut nu: f64) -> (f64, f64) {
        let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());
        let mut r = self.residual(beta, nu);
        for _ in 0..50 {
            if norm(r) < 1e-14 {
                break;
            }
            let (mut c0, mut c1, mut c2) = (0.0, 0.0, 0.0);
            for &x in self.eps {
                let f = fermi(beta * x - nu);
                let c = f * (1.0 - f);
                c0 += c;
                c1 += c * x;
                c2 += c * x * x;
            }
            // d(n, e)/d(beta, nu) = [[-c1, c0], [-c2, c1]]
            let det = -c1 * c1 + c0 * c2;
            if det.abs() < 1e-300 {
                break;
            }
            let db = (c0 * r.1 - c1 * r.0) / det;
            let dn = (c1 * r.1 - c2 * r.0) / det;
            let (nb, nn) = (beta + db, nu + dn);
            let nr = self.residual(nb, nn);
            if norm(nr) >= norm(r) {
                break;
            }
            beta = nb;
            nu = nn;
            r = nr;
        }
        (beta, nu)
    }
}

fn saturated_model(eps: &[f64], m: usize, top: bool) -> GceModel {
    let n = eps.len();
    // filled set: lowest m (top = false) or highest m
    let (last_filled, first_empty) = if top {
        (eps[n - m], eps[n - m - 1])
    } else {
        (eps[m - 1], eps[m])
    };
    let mu = 0.5 * (last_filled + first_empty);
    let scale = eps.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    let lambdas = eps
        .iter()
        .map(|&x| {
            let d = x - mu;
            if d.abs() <= 1e-12 * scale {
                0.0
            } else if (d > 0.0) != top {
                LAMBDA_CLAMP
            } else {
                -LAMBDA_CLAMP
            }
        })
        .collect();
    GceModel {
        beta: if top { -1.0 } else { 1.0 },
        mu,
        saturated: true,
        residual_particles: 0.0,
        residual_energy: 0.0,
        lambdas,
    }
}

/// Fit `(beta, mu)` so that `sum_j f_j = m_target` and `sum_j eps_j f_j = e_target`.
pub fn fit_gce(basis: &ModeBasis, e_target: f64, m_target: usize) -> Result<GceModel> {
    let eps: Vec<f64> = basis.energies.iter().copied().collect();
    let n = eps.len();
    if m_target == 0 || m_target >= n {
        return Err(Error::InvalidParams(format!("GCE needs 0 < M < N, got M = {m_target}, N = {n}")));
    }
    if !e_target.is_finite() {
        return Err(Error::InvalidParams("non-finite target energy".into()));
    }
    let e_min: f64 = eps[..m_target].iter().sum();
    let e_max: f64 = eps[n - m_target..].iter().sum();
    let scale = eps.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    let edge = 1e-10 * scale * m_target as f64;
    if e_target < e_min - edge || e_target > e_max + edge {
        return Err(Error::NoSolution(format!(
            "target energy {e_target} outside [{e_min}, {e_max}] for {m_target} particles"
        )));
    }
    if e_target <= e_min + edge {
        return Ok(saturated_model(&eps, m_target, false));
    }
    if e_target >= e_max - edge {
        return Ok(saturated_model(&eps, m_target, true));
    }
    let p = Problem { eps: &eps, m: m_target as f64, e: e_target };
    let e0 = p.energy_at(0.0);
    let sign = if e_target < e0 { 1.0 } else { -1.0 };
    let mut lo = 0.0;
    let mut hi = 1.0 / scale;
    let cap = 1e8 / scale;
    while (p.energy_at(sign * hi) - e_target) * sign > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return Ok(saturated_model(&eps, m_target, sign < 0.0));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (p.energy_at(sign * mid) - e_target) * sign > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta0 = sign * 0.5 * (lo + hi);
    let (beta, nu) = p.newton(beta0, p.nu_for(beta0));
    let (rn, re) = p.residual(beta, nu);
    if rn.abs() > GCE_TOL || re.abs() > GCE_TOL {
        return Err(Error::NonConvergence { iterations: 200, gradient_norm: rn.abs().max(re.abs()) });
    }
    let mu = if beta != 0.0 { nu / beta } else { 0.0 };
    Ok(GceModel {
        beta,
        mu,
        saturated: false,
        residual_particles: rn,
        residual_energy: re,
        lambdas: eps.iter().map(|&x| beta * x - nu).collect(),
    })
}
