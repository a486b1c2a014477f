//! Fitted ensembles as normalized distributions over a Fock support.

use crate::error::{Error, Result};
use crate::fit::binary_entropy;
use crate::fit::family::{family_moments, greedy_min_energy};
use crate::fit::gge::fermi;
use crate::fock::config::{support_configs, FockConfig, Support};
use crate::fock::distribution::DiagonalDistribution;
use crate::fock::scan::PairwiseEnergy;

/// `p(s) = exp(-E(s)) / Z` on `support`, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct FockModel {
    pub support: Support,
    pub energy: PairwiseEnergy,
    pub log_z: f64,
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln e_m(x)` for `x_j = exp(-lambda_j)`: the log-partition function of
/// independent modes restricted to exactly `m` occupied.
pub fn log_elementary_symmetric(lambdas: &[f64], m: usize) -> f64 {
    let mut e = vec![f64::NEG_INFINITY; m + 1];
    e[0] = 0.0;
    for &l in lambdas {
        for k in (1..=m).rev() {
            e[k] = log_add(e[k], e[k - 1] - l);
        }
    }
    e[m]
}

/// `sum_j ln(1 + exp(-lambda_j))`.
pub fn log_z_independent_full(lambdas: &[f64]) -> f64 {
    lambdas.iter().map(|&l| log_add(0.0, -l)).sum()
}

impl FockModel {
    /// Independent modes, normalized over `support` analytically.
    pub fn independent(lambdas: Vec<f64>, support: Support) -> Result<Self> {
        if lambdas.len() != support.n_modes() {
            return Err(Error::Dimension("multiplier count differs from N".into()));
        }
        let log_z = match support {
            Support::Full { .. } => log_z_independent_full(&lambdas),
            Support::Fixed { m, .. } => log_elementary_symmetric(&lambdas, m),
            Support::Blocks { blocks, .. } => blocks
                .iter()
                .map(|(mask, k)| {
                    let sub: Vec<f64> = FockConfig(mask).modes().map(|j| lambdas[j]).collect();
                    log_elementary_symmetric(&sub, k)
                })
                .sum(),
        };
        Ok(FockModel { support, energy: PairwiseEnergy::independent(lambdas), log_z })
    }

    /// Normalize an arbitrary pairwise energy by enumeration.
    pub fn normalized(energy: PairwiseEnergy, support: Support, budget: u64) -> Result<Self> {
        support.validate()?;
        support.check_budget(budget)?;
        if energy.n_modes() != support.n_modes() {
            return Err(Error::Dimension("energy and support disagree on N".into()));
        }
        let log_z = family_moments(support, &energy, greedy_min_energy(support, &energy)).log_z;
        Ok(FockModel { support, energy, log_z })
    }

    pub fn n_modes(&self) -> usize {
        self.support.n_modes()
    }

    pub fn log_prob(&self, s: FockConfig) -> f64 {
        if !self.support.contains(s) {
            return f64::NEG_INFINITY;
        }
        -self.energy.energy(s.0) - self.log_z
    }

    pub fn prob(&self, s: FockConfig) -> f64 {
        self.log_prob(s).exp()
    }

    pub fn is_independent(&self) -> bool {
        self.energy.pairs.as_ref().map_or(true, |w| w.iter().all(|&x| x == 0.0))
    }
}

/// Materialize a model over its support.
pub fn model_distribution(model: &FockModel, budget: u64) -> Result<DiagonalDistribution> {
    let configs = support_configs(model.support, budget)?;
    let probs = configs.iter().map(|&c| model.prob(c)).collect();
    Ok(DiagonalDistribution { support: model.support, configs, probs })
}

/// Entropy of a model by the exponential-family identity.
///
/// Closed form for independent modes on the full space; otherwise one
/// moment pass over the support.
pub fn model_entropy(model: &FockModel, budget: u64) -> Result<f64> {
    if model.is_independent() && matches!(model.support, Support::Full { .. }) {
        return Ok(model.energy.lambdas.iter().map(|&l| binary_entropy(fermi(l))).sum());
    }
    model.support.check_budget(budget)?;
    let m = family_moments(model.support, &model.energy, greedy_min_energy(model.support, &model.energy));
    Ok(m.entropy(&model.energy).max(0.0))
}
