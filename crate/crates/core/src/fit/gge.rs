//! Generalized Gibbs ensemble: one multiplier per conserved mode occupation.

use serde::{Deserialize, Serialize};

use crate::fit::{binary_entropy, LAMBDA_CLAMP, SATURATION_EPS};
use crate::fock::moments::MomentTargets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgeModel {
    /// `ln((1 - h_j) / h_j)`; saturated modes carry `+-LAMBDA_CLAMP`.
    pub lambdas: Vec<f64>,
    /// Modes with `h_j` within `SATURATION_EPS` of 0 or 1.
    pub saturated: Vec<usize>,
    /// `sum_j H(h_j)` with `H` the binary entropy.
    pub entropy: f64,
}

impl GgeModel {
    /// Occupation predicted for mode `j`, `1 / (exp(lambda_j) + 1)`.
    pub fn occupation(&self, j: usize) -> f64 {
        fermi(self.lambdas[j])
    }
}

#[inline]
pub fn fermi(lambda: f64) -> f64 {
    // stable in both tails
    if lambda > 0.0 {
        let e = (-lambda).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + lambda.exp())
    }
}

pub fn fit_gge(targets: &MomentTargets) -> GgeModel {
    let mut lambdas = Vec::with_capacity(targets.n_modes());
    let mut saturated = Vec::new();
    for (j, &h) in targets.means.iter().enumerate() {
        if h < SATURATION_EPS {
            saturated.push(j);
            lambdas.push(LAMBDA_CLAMP);
        } else if h > 1.0 - SATURATION_EPS {
            saturated.push(j);
            lambdas.push(-LAMBDA_CLAMP);
        } else {
            lambdas.push(((1.0 - h) / h).ln());
        }
    }
    let entropy = targets
        .means
        .iter()
        .enumerate()
        .filter(|(j, _)| !saturated.contains(j))
        .map(|(_, &h)| binary_entropy(h))
        .sum();
    GgeModel { lambdas, saturated, entropy }
}
