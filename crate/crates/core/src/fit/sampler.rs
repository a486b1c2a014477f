//! Heat-bath Gibbs sampling of a pairwise model.
//!
//! Full support uses single-mode flips; a fixed-particle sector uses swaps of
//! one occupied and one empty mode, which keep the particle number. Both are
//! driven by a seeded ChaCha stream, so a run is reproducible from its seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::family::Features;
use crate::fock::config::Support;
use crate::fock::scan::PairwiseEnergy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub seed: u64,
    /// Sweeps discarded at the start and after every parameter update (a quarter of this).
    pub burn_in_sweeps: usize,
    /// Sweeps between recorded samples; one sweep is `N` proposals.
    pub thinning: usize,
    /// Samples per estimate at the start of a fit.
    pub samples: usize,
    /// Upper limit the sample count may grow to when the fit stalls on noise.
    pub max_samples: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            seed: 0x5eed,
            burn_in_sweeps: 200,
            thinning: 1,
            samples: 20_000,
            max_samples: 4_000_000,
        }
    }
}

pub struct GibbsSampler {
    support: Support,
    n: usize,
    /// Modes a particle on mode `i` may swap with.
    partners: Vec<u64>,
    lam: Vec<f64>,
    w: Vec<f64>,
    state: u64,
    /// `field[k] = lambda_k + sum_{o in s} w_ko`.
    field: Vec<f64>,
    rng: ChaCha8Rng,
}

#[inline]
fn accept(rng: &mut ChaCha8Rng, delta: f64) -> bool {
    // heat bath: P = 1 / (1 + exp(delta))
    let p = if delta > 0.0 {
        let e = (-delta).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + delta.exp())
    };
    rng.gen::<f64>() < p
}

impl GibbsSampler {
    pub fn new(support: Support, energy: &PairwiseEnergy, seed: u64) -> Result<Self> {
        support.validate()?;
        let n = support.n_modes();
        if energy.n_modes() != n {
            return Err(Error::Dimension("energy and support disagree on N".into()));
        }
        let cons = support.constraints();
        let state = match support.particles() {
            Some(_) => {
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
            None => 0,
        };
        let partners = (0..n)
            .map(|i| (0..n).filter(|&j| support.same_block(i, j)).fold(0u64, |b, j| b | 1 << j))
            .collect();
        let mut s = GibbsSampler {
            support,
            n,
            partners,
            lam: Vec::new(),
            w: Vec::new(),
            state,
            field: vec![0.0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.set_energy(energy);
        Ok(s)
    }

    /// Swap in new parameters, keeping the current configuration.
    pub fn set_energy(&mut self, energy: &PairwiseEnergy) {
        let n = self.n;
        self.lam = energy.lambdas.clone();
        self.w = energy.pairs.clone().unwrap_or_else(|| vec![0.0; n * n]);
        for k in 0..n {
            let mut f = self.lam[k];
            for o in 0..n {
                if self.state >> o & 1 == 1 {
                    f += self.w[k * n + o];
                }
            }
            self.field[k] = f;
        }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    fn toggle(&mut self, j: usize) {
        let n = self.n;
        let sign = if self.state >> j & 1 == 1 { -1.0 } else { 1.0 };
        self.state ^= 1 << j;
        let row = &self.w[j * n..(j + 1) * n];
        for (f, &w) in self.field.iter_mut().zip(row) {
            *f += sign * w;
        }
    }

    /// One sweep: `N` proposals.
    pub fn sweep(&mut self) {
        let n = self.n;
        match self.support.particles() {
            None => {
                for _ in 0..n {
                    let j = self.rng.gen_range(0..n);
                    let delta = if self.state >> j & 1 == 1 { -self.field[j] } else { self.field[j] };
                    if accept(&mut self.rng, delta) {
                        self.toggle(j);
                    }
                }
            }
            Some(m) => {
                if m == 0 || m == n {
                    return;
                }
                for _ in 0..n {
                    let i = nth_set(self.state, self.rng.gen_range(0..m));
                    // equal numbers of empty partners before and after a swap keep this symmetric
                    let empty = !self.state & self.partners[i] & mask(n);
                    if empty == 0 {
                        continue;
                    }
                    let j = nth_set(empty, self.rng.gen_range(0..empty.count_ones() as usize));
                    let delta = self.field[j] - self.w[j * n + i] - self.field[i];
                    if accept(&mut self.rng, delta) {
                        self.toggle(i);
                        self.toggle(j);
                    }
                }
            }
        }
    }

    /// Feature means and covariance from `samples` recorded states.
    pub fn estimate(&mut self, samples: usize, thinning: usize) -> (Vec<f64>, DMatrix<f64>) {
        let feats = Features::new(self.n);
        let p = feats.len();
        let mut first = vec![0.0; p];
        let mut second = vec![0.0; p * p];
        let mut active = Vec::with_capacity(p);
        for _ in 0..samples {
            for _ in 0..thinning.max(1) {
                self.sweep();
            }
            active.clear();
            let mut b = self.state;
            while b != 0 {
                active.push(b.trailing_zeros() as usize);
                b &= b - 1;
            }
            let k = active.len();
            for x in 0..k {
                for y in 0..x {
                    let f = feats.pair(active[y], active[x]);
                    active.push(f);
                }
            }
            active.sort_unstable();
            for (x, &a) in active.iter().enumerate() {
                first[a] += 1.0;
                for &b in &active[..=x] {
                    second[a * p + b] += 1.0;
                }
            }
        }
        let inv = 1.0 / samples.max(1) as f64;
        let mean: Vec<f64> = first.iter().map(|x| x * inv).collect();
        let mut cov = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..=a {
                let c = second[a * p + b] * inv - mean[a] * mean[b];
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        (mean, cov)
    }
}

#[inline]
fn mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

#[inline]
fn nth_set(mut bits: u64, k: usize) -> usize {
    for _ in 0..k {
        bits &= bits - 1;
    }
    bits.trailing_zeros() as usize
}
