//! Single-particle quench Hamiltonian on a 1D superlattice.
//!
//! The lattice carries nearest-neighbour hopping `-t` and an on-site
//! potential `J cos(2 pi j / period)` for sites `j = 1..=N`. The pre-quench
//! state is the ground state of a filled Fermi sea; the post-quench modes are
//! the eigenvectors of the Hamiltonian after the potential is switched on.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues closer than this (times the spectral scale) are treated as one level.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    Open,
}

impl std::str::FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            other => Err(Error::InvalidParams(format!("unknown boundary '{other}'"))),
        }
    }
}

/// How to resolve a degenerate Fermi level when building the ground state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FermiRule {
    /// Refuse to pick a state.
    #[default]
    Error,
    /// Fill reflection-even combinations of a degenerate shell first.
    Parity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchParams {
    pub n_sites: usize,
    pub hopping: f64,
    pub potential_strength: f64,
    pub period: usize,
    pub n_particles: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl QuenchParams {
    /// Half-filled periodic chain with unit hopping.
    pub fn half_filled(n_sites: usize, potential_strength: f64, period: usize) -> Self {
        QuenchParams {
            n_sites,
            hopping: 1.0,
            potential_strength,
            period,
            n_particles: n_sites / 2,
            boundary: Boundary::Periodic,
        }
    }

    /// Same lattice with a different potential strength.
    pub fn with_potential(&self, potential_strength: f64) -> Self {
        QuenchParams { potential_strength, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 sites, got {}",
                self.n_sites
            )));
        }
        if self.n_sites > 64 {
            return Err(Error::InvalidParams(format!(
                "at most 64 sites are supported, got {}",
                self.n_sites
            )));
        }
        if self.period == 0 {
            return Err(Error::InvalidParams("period must be positive".into()));
        }
        if self.boundary == Boundary::Periodic && self.n_sites % self.period != 0 {
            return Err(Error::InvalidParams(format!(
                "periodic boundary needs N ({}) to be a multiple of the period ({})",
                self.n_sites, self.period
            )));
        }
        if self.n_particles == 0 || self.n_particles > self.n_sites {
            return Err(Error::InvalidParams(format!(
                "particle number {} outside 1..={}",
                self.n_particles, self.n_sites
            )));
        }
        if !self.hopping.is_finite() || !self.potential_strength.is_finite() {
            return Err(Error::InvalidParams("hopping and potential must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SingleParticleHamiltonian {
    pub matrix: DMatrix<f64>,
    pub params: QuenchParams,
}

/// Post- or pre-quench single-particle eigenbasis, energies ascending.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    pub energies: DVector<f64>,
    /// Column `j` is the eigenvector of `energies[j]` in the site basis.
    pub vectors: DMatrix<f64>,
}

impl ModeBasis {
    pub fn n_modes(&self) -> usize {
        self.energies.len()
    }

    /// Many-body energy of a set of occupied modes.
    pub fn config_energy(&self, bits: u64) -> f64 {
        let mut e = 0.0;
        let mut b = bits;
        while b != 0 {
            let j = b.trailing_zeros() as usize;
            e += self.energies[j];
            b &= b - 1;
        }
        e
    }

    /// Lowest many-body energy with `m` particles.
    pub fn sector_min_energy(&self, m: usize) -> f64 {
        self.energies.iter().take(m).sum()
    }

    /// Lowest many-body energy over all particle numbers.
    pub fn full_min_energy(&self) -> f64 {
        self.energies.iter().filter(|&&e| e < 0.0).sum()
    }
}

/// Occupied orbitals of a Slater determinant, one per column.
#[derive(Debug, Clone)]
pub struct SlaterState {
    pub orbitals: DMatrix<f64>,
}

/// Pre-quench orbitals expressed in the post-quench mode basis: `U = W^T Phi`.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    pub u: DMatrix<f64>,
}

impl OverlapMatrix {
    pub fn n_modes(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_particles(&self) -> usize {
        self.u.ncols()
    }
}

/// `g[i][j] = <a_i^dag a_j>` at t = 0 in the post-quench mode basis.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub g: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn occupations(&self) -> Vec<f64> {
        self.g.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.g.trace()
    }

    /// Mean energy `sum_j eps_j g_jj` of the post-quench state.
    pub fn energy(&self, basis: &ModeBasis) -> f64 {
        self.g
            .diagonal()
            .iter()
            .zip(basis.energies.iter())
            .map(|(n, e)| n * e)
            .sum()
    }
}

pub fn build_hamiltonian(params: &QuenchParams) -> Result<SingleParticleHamiltonian> {
    params.validate()?;
    let n = params.n_sites;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let lam = params.period as f64;
    for x in 0..n {
        let j = (x + 1) as f64;
        h[(x, x)] = params.potential_strength * (2.0 * PI * j / lam).cos();
    }
    let bonds = match params.boundary {
        Boundary::Periodic => n,
        Boundary::Open => n - 1,
    };
    for x in 0..bonds {
        let y = (x + 1) % n;
        h[(x, y)] -= params.hopping;
        h[(y, x)] -= params.hopping;
    }
    Ok(SingleParticleHamiltonian { matrix: h, params: params.clone() })
}

/// Site permutation `x -> (N - 2 - x) mod N`, i.e. `j -> -j` on 1-based sites.
fn reflection_image(n: usize, x: usize) -> usize {
    (2 * n - 2 - x) % n
}

fn commutes_with_reflection(h: &DMatrix<f64>) -> bool {
    let n = h.nrows();
    let scale = h.amax().max(1.0);
    for x in 0..n {
        for y in 0..n {
            let hr = h[(reflection_image(n, x), reflection_image(n, y))];
            if (hr - h[(x, y)]).abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

/// Flip a vector so that its first clearly nonzero component is positive.
fn fix_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-8) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > 1e-10 {
            return x.partial_cmp(y).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

/// Rotate the columns of `q` (an orthonormal basis of a subspace) so that the
/// projection of `op` onto the subspace becomes diagonal. Returns the rotated
/// basis and the diagonal values, ascending.
fn rotate_by(q: &DMatrix<f64>, op: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let proj = q.transpose() * op * q;
    let proj = (&proj + proj.transpose()) * 0.5;
    let eig = SymmetricEigen::new(proj);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let rot = DMatrix::from_fn(q.ncols(), q.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    (q * rot, vals)
}

/// Canonical basis for one degenerate cluster: reflection eigenvectors
/// (even first), further ties split by the position operator, sign-fixed and
/// ordered lexicographically within equal parity.
fn canonical_cluster(q: DMatrix<f64>, reflection: Option<&DMatrix<f64>>) -> Vec<DVector<f64>> {
    let n = q.nrows();
    let position = DMatrix::from_diagonal(&DVector::from_fn(n, |x, _| (x + 1) as f64));
    let mut groups: Vec<(i32, DMatrix<f64>)> = Vec::new();
    match reflection {
        Some(r) => {
            let (rot, vals) = rotate_by(&q, r);
            let even: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > 0.0).collect();
            let odd: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] <= 0.0).collect();
            for (parity, idx) in [(0, even), (1, odd)] {
                if !idx.is_empty() {
                    groups.push((parity, rot.select_columns(idx.iter())));
                }
            }
        }
        None => groups.push((0, q)),
    }
    let mut out = Vec::new();
    for (_, g) in groups {
        let g = if g.ncols() > 1 { rotate_by(&g, &position).0 } else { g };
        let mut vs: Vec<DVector<f64>> = g
            .column_iter()
            .map(|c| {
                let mut v = c.into_owned();
                fix_sign(&mut v);
                v
            })
            .collect();
        vs.sort_by(|a, b| lexicographic(b, a));
        out.extend(vs);
    }
    out
}

pub fn diagonalize(h: &SingleParticleHamiltonian) -> Result<ModeBasis> {
    let m = &h.matrix;
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension("Hamiltonian must be square".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let sorted: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();

    let reflection = commutes_with_reflection(m).then(|| {
        DMatrix::from_fn(n, n, |x, y| if reflection_image(n, y) == x { 1.0 } else { 0.0 })
    });
    let tol = DEGENERACY_TOL * sorted.iter().fold(1.0_f64, |a, e| a.max(e.abs()));

    let mut energies = Vec::with_capacity(n);
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted[end] - sorted[end - 1] <= tol {
            end += 1;
        }
        let cols: Vec<usize> = order[start..end].to_vec();
        let q = eig.eigenvectors.select_columns(cols.iter());
        let cluster = if end - start == 1 {
            let mut v = q.column(0).into_owned();
            fix_sign(&mut v);
            vec![v]
        } else {
            canonical_cluster(q, reflection.as_ref())
        };
        // One shared Rayleigh quotient per shell keeps degenerate levels exactly equal.
        let mean = cluster.iter().map(|v| (v.transpose() * m * v)[(0, 0)]).sum::<f64>()
            / cluster.len() as f64;
        for v in cluster {
            energies.push(mean);
            vectors.push(v);
        }
        start = end;
    }
    Ok(ModeBasis {
        energies: DVector::from_vec(energies),
        vectors: DMatrix::from_columns(&vectors),
    })
}

/// Indices of the degenerate shell containing the Fermi level, if the gap
/// between the highest filled and lowest empty level is below tolerance.
pub fn fermi_degeneracy(basis: &ModeBasis, m: usize) -> Option<Vec<usize>> {
    let n = basis.n_modes();
    if m == 0 || m >= n {
        return None;
    }
    let e = &basis.energies;
    let tol = DEGENERACY_TOL * e.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    if e[m] - e[m - 1] > tol {
        return None;
    }
    let mut lo = m - 1;
    while lo > 0 && e[lo] - e[lo - 1] <= tol {
        lo -= 1;
    }
    let mut hi = m;
    while hi + 1 < n && e[hi + 1] - e[hi] <= tol {
        hi += 1;
    }
    Some((lo..=hi).collect())
}

/// Slater determinant filling the `m` lowest modes of `basis`.
pub fn ground_state(basis: &ModeBasis, m: usize, rule: FermiRule) -> Result<SlaterState> {
    let n = basis.n_modes();
    if m == 0 || m > n {
        return Err(Error::InvalidParams(format!("particle number {m} outside 1..={n}")));
    }
    if let Some(levels) = fermi_degeneracy(basis, m) {
        if rule == FermiRule::Error {
            let energies = levels.iter().map(|&k| basis.energies[k]).collect();
            return Err(Error::FermiDegeneracy { levels, energies });
        }
        // Parity: canonical cluster order already puts even combinations first.
    }
    Ok(SlaterState { orbitals: basis.vectors.columns(0, m).into_owned() })
}

pub fn quench_overlap(state: &SlaterState, post: &ModeBasis) -> Result<OverlapMatrix> {
    if state.orbitals.nrows() != post.vectors.nrows() {
        return Err(Error::Dimension(format!(
            "state has {} sites, basis has {}",
            state.orbitals.nrows(),
            post.vectors.nrows()
        )));
    }
    Ok(OverlapMatrix { u: post.vectors.transpose() * &state.orbitals })
}

pub fn one_body_dm(u: &OverlapMatrix) -> CorrelationMatrix {
    CorrelationMatrix { g: &u.u * u.u.transpose() }
}

/// Everything derived from one sudden quench, computed once.
#[derive(Debug, Clone)]
pub struct Quench {
    pub params: QuenchParams,
    pub pre: ModeBasis,
    pub post: ModeBasis,
    pub state: SlaterState,
    pub overlap: OverlapMatrix,
    pub correlations: CorrelationMatrix,
}

impl Quench {
    /// Ground state at `J = 0`, evolved under the Hamiltonian with `params`.
    pub fn from_params(params: &QuenchParams, rule: FermiRule) -> Result<Self> {
        Self::between(&params.with_potential(0.0), params, rule)
    }

    /// Ground state of `initial`, evolved under `final_`.
    pub fn between(initial: &QuenchParams, final_: &QuenchParams, rule: FermiRule) -> Result<Self> {
        if initial.n_sites != final_.n_sites || initial.n_particles != final_.n_particles {
            return Err(Error::Dimension("initial and final lattices differ".into()));
        }
        let pre = diagonalize(&build_hamiltonian(initial)?)?;
        let post = diagonalize(&build_hamiltonian(final_)?)?;
        let state = ground_state(&pre, final_.n_particles, rule)?;
        let overlap = quench_overlap(&state, &post)?;
        let correlations = one_body_dm(&overlap);
        Ok(Quench { params: final_.clone(), pre, post, state, overlap, correlations })
    }

    pub fn n_modes(&self) -> usize {
        self.params.n_sites
    }

    pub fn n_particles(&self) -> usize {
        self.params.n_particles
    }

    /// Conserved mean energy of the quenched state.
    pub fn energy(&self) -> f64 {
        self.correlations.energy(&self.post)
    }
}
