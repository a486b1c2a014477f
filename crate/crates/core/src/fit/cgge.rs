//! Correlated GGE: the pairwise maximum-entropy model matching every
//! `<n_j>` and `<n_i n_j>` of the diagonal ensemble.
//!
//! The fit minimizes the convex dual `L(theta) = ln Z(theta) + theta . t`,
//! whose gradient is `t - <f>` and whose Hessian is the feature covariance.
//! Small systems use damped Newton with the exact Hessian (pseudo-inverse, so
//! the flat gauge directions of a fixed-particle sector are harmless); larger
//! ones use L-BFGS preconditioned by the exact Hessian diagonal
//! `<f>(1 - <f>)`. The sampled backend replaces the exact moments with Gibbs
//! estimates.

use log::{debug, info, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::family::{
    family_curvature, family_moments, greedy_min_energy, pseudo_solve, FamilyMoments, Features,
};
use crate::fit::gge::fit_gge;
use crate::fit::model::FockModel;
use crate::fit::sampler::{GibbsSampler, SamplerOptions};
use crate::fit::{LAMBDA_CLAMP, SATURATION_EPS};
use crate::fock::config::{Support, DEFAULT_BUDGET, NO_BLOCK};
use crate::fock::moments::MomentTargets;
use crate::fock::scan::PairwiseEnergy;

pub const EXACT_TOL: f64 = 1e-8;
pub const SAMPLED_TOL: f64 = 1e-3;

/// Largest [`curvature_work`] for which `Optimizer::Auto` still picks Newton.
pub const NEWTON_MAX_WORK: f64 = 2e10;

/// Rough cost of one exact Hessian pass: configurations times the square of
/// the number of features active in each.
pub fn curvature_work(support: &Support) -> f64 {
    let active = match support.particles() {
        Some(m) => (m + m * m.saturating_sub(1) / 2) as f64,
        None => {
            let n = support.n_modes() as f64;
            n * (n + 1.0) / 2.0
        }
    };
    support.size() as f64 * active * active
}

/// Relative size below which a change of the dual counts as rounding noise.
pub const DUAL_NOISE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Exact,
    Sampled,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "sampled" => Ok(Backend::Sampled),
            _ => Err(Error::InvalidParams(format!("unknown backend {s:?}"))),
        }
    }
}

/// Which configurations the model lives on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportKind {
    /// Only configurations with the quench's particle number.
    #[default]
    Fixed,
    /// All `2^N` occupation strings.
    Full,
}

impl std::str::FromStr for SupportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SupportKind::Fixed),
            "full" => Ok(SupportKind::Full),
            _ => Err(Error::InvalidParams(format!("unknown sector {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Newton up to `newton_max_modes` modes or while the exact Hessian is
    /// affordable (see [`curvature_work`]), L-BFGS otherwise.
    #[default]
    Auto,
    Newton,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CggeOptions {
    pub support: SupportKind,
    pub backend: Backend,
    pub optimizer: Optimizer,
    /// Max-norm bound on `t - <f>`; backend default when `None`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub budget: u64,
    pub newton_max_modes: usize,
    pub lbfgs_memory: usize,
    pub sampler: SamplerOptions,
    /// Restrict the model to configurations that keep every conserved block
    /// particle number found in the targets.
    pub reduce_support: bool,
}

impl Default for CggeOptions {
    fn default() -> Self {
        CggeOptions {
            support: SupportKind::Fixed,
            backend: Backend::Exact,
            optimizer: Optimizer::Auto,
            tol: None,
            max_iter: 3000,
            budget: DEFAULT_BUDGET,
            newton_max_modes: 16,
            lbfgs_memory: 20,
            sampler: SamplerOptions::default(),
            reduce_support: true,
        }
    }
}

impl CggeOptions {
    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(match self.backend {
            Backend::Exact => EXACT_TOL,
            Backend::Sampled => SAMPLED_TOL,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CggeModel {
    pub support: Support,
    pub lambdas: Vec<f64>,
    /// Symmetric `N x N` row-major, zero diagonal; the pair term is
    /// `sum_{i != j} V_ij n_i n_j = sum_{i<j} 2 V_ij n_i n_j`.
    pub v: Vec<f64>,
    pub log_z: Option<f64>,
    pub backend: Backend,
    pub tolerance: f64,
    pub iterations: usize,
    pub saturated: Vec<usize>,
    /// Pairs `[i, j]`, `i < j`, with an empty occupation cell held at zero
    /// weight by a fixed penalty instead of a fitted coupling.
    pub pinned_pairs: Vec<[usize; 2]>,
}

/// On-disk form of a [`CggeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CggeModelFile {
    pub n_modes: usize,
    pub support: Support,
    pub lambdas: Vec<f64>,
    /// Strict lower triangle of `V`, row-major: `V_10, V_20, V_21, V_30, ...`.
    pub v: Vec<f64>,
    pub log_z: Option<f64>,
    pub backend: Backend,
    pub tolerance: f64,
    pub iterations: usize,
    pub saturated: Vec<usize>,
    #[serde(default)]
    pub pinned_pairs: Vec<[usize; 2]>,
}

impl CggeModel {
    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn v_at(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.n_modes() + j]
    }

    /// Whether the coupling of modes `i != j` was fitted rather than fixed
    /// by saturation, a pinned cell or the support.
    pub fn is_fitted(&self, i: usize, j: usize) -> bool {
        i != j
            && !self.saturated.contains(&i)
            && !self.saturated.contains(&j)
            && !self.pinned_pairs.contains(&[i.min(j), i.max(j)])
            && possible_cells(&self.support, i, j).iter().all(|&c| c)
    }

    pub fn energy(&self) -> PairwiseEnergy {
        PairwiseEnergy { lambdas: self.lambdas.clone(), pairs: Some(self.v.iter().map(|x| 2.0 * x).collect()) }
    }

    pub fn to_fock_model(&self) -> Result<FockModel> {
        match self.log_z {
            Some(log_z) => Ok(FockModel { support: self.support, energy: self.energy(), log_z }),
            None => Err(Error::BudgetExceeded { required: self.support.size(), budget: 0 }),
        }
    }

    pub fn to_file(&self) -> CggeModelFile {
        let n = self.n_modes();
        let mut v = Vec::with_capacity(n * (n.max(1) - 1) / 2);
        for i in 0..n {
            for j in 0..i {
                v.push(self.v[i * n + j]);
            }
        }
        CggeModelFile {
            n_modes: n,
            support: self.support,
            lambdas: self.lambdas.clone(),
            v,
            log_z: self.log_z,
            backend: self.backend,
            tolerance: self.tolerance,
            iterations: self.iterations,
            saturated: self.saturated.clone(),
            pinned_pairs: self.pinned_pairs.clone(),
        }
    }

    pub fn from_file(f: &CggeModelFile) -> Result<Self> {
        let n = f.n_modes;
        if f.lambdas.len() != n || f.v.len() != n * n.saturating_sub(1) / 2 || f.support.n_modes() != n {
            return Err(Error::Dimension("model file sizes are inconsistent".into()));
        }
        let mut v = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in 0..i {
                v[i * n + j] = f.v[k];
                v[j * n + i] = f.v[k];
                k += 1;
            }
        }
        Ok(CggeModel {
            support: f.support,
            lambdas: f.lambdas.clone(),
            v,
            log_z: f.log_z,
            backend: f.backend,
            tolerance: f.tolerance,
            iterations: f.iterations,
            saturated: f.saturated.clone(),
            pinned_pairs: f.pinned_pairs.clone(),
        })
    }
}

/// Fit outcome with diagnostics.
#[derive(Debug, Clone)]
pub struct CggeFit {
    pub model: CggeModel,
    /// Max-norm of `t - <f>` over the fitted features at the final iterate.
    pub gradient_norm: f64,
    /// Dual objective at every accepted iterate.
    pub dual_history: Vec<f64>,
    /// `<E> + ln Z` at the solution (exact backend) or `NaN` if unnormalized.
    pub entropy: f64,
    pub moments: Option<MomentTargets>,
    /// Realizability problems found in the targets.
    pub warnings: Vec<String>,
    pub optimizer: Optimizer,
}

struct Problem {
    support: Support,
    feats: Features,
    targets: Vec<f64>,
    /// Indices of the fitted features.
    free: Vec<usize>,
}

struct Eval {
    dual: f64,
    grad: Vec<f64>,
    gnorm: f64,
    expectations: Vec<f64>,
}

impl Problem {
    fn expectations(&self, m: &FamilyMoments) -> Vec<f64> {
        let n = self.feats.n;
        let mut out = vec![0.0; self.feats.len()];
        out[..n].copy_from_slice(&m.means);
        for i in 0..n {
            for j in i + 1..n {
                out[self.feats.pair(i, j)] = m.pairs[i * n + j];
            }
        }
        out
    }

    fn finish(&self, theta: &[f64], moments: FamilyMoments, expectations: Vec<f64>) -> Eval {
        let dual = moments.log_z + theta.iter().zip(&self.targets).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = vec![0.0; theta.len()];
        let mut gnorm: f64 = 0.0;
        for &a in &self.free {
            grad[a] = self.targets[a] - expectations[a];
            gnorm = gnorm.max(grad[a].abs());
        }
        Eval { dual, grad, gnorm, expectations }
    }

    fn eval(&self, theta: &[f64], e_ref: &mut f64) -> Eval {
        let energy = self.feats.to_energy(theta);
        let m = family_moments(self.support, &energy, *e_ref);
        *e_ref = m.min_energy;
        let x = self.expectations(&m);
        self.finish(theta, m, x)
    }

    fn eval_curved(&self, theta: &[f64], e_ref: &mut f64) -> (Eval, nalgebra::DMatrix<f64>) {
        let energy = self.feats.to_energy(theta);
        let c = family_curvature(self.support, &energy, *e_ref);
        *e_ref = c.moments.min_energy;
        (self.finish(theta, c.moments, c.expectations), c.covariance)
    }

    fn restrict(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&a| v[a]))
    }

    fn step(&self, theta: &[f64], dir: &DVector<f64>, alpha: f64) -> Vec<f64> {
        let mut out = theta.to_vec();
        for (k, &a) in self.free.iter().enumerate() {
            out[a] += alpha * dir[k];
        }
        out
    }
}

fn accepts(old: &Eval, new: &Eval, armijo: f64) -> bool {
    let noise = DUAL_NOISE * old.dual.abs().max(1.0);
    new.dual <= old.dual + armijo || (new.dual <= old.dual + noise && new.gnorm < old.gnorm)
}

/// Fit the correlated GGE to `targets`.
pub fn fit_cgge(targets: &MomentTargets, opts: &CggeOptions) -> Result<CggeFit> {
    let n = targets.n_modes();
    if n == 0 || n > 64 || targets.pairs.len() != n * n {
        return Err(Error::Dimension(format!("targets for {n} modes are malformed")));
    }
    let total = targets.total_particles();
    let m = total.round() as usize;
    let support = match opts.support {
        SupportKind::Full => Support::Full { n },
        SupportKind::Fixed => {
            if (total - m as f64).abs() > 1e-6 {
                return Err(Error::SupportMismatch(format!(
                    "occupations sum to {total}, not an integer particle number"
                )));
            }
            Support::Fixed { n, m }
        }
    };
    support.validate()?;
    let mut warnings = targets.realizability_issues(support.particles());
    let requested = support;
    let conservation = targets.conservation(support.particles());
    if conservation.unexplained > 0 {
        warnings.push(format!(
            "{} zero-variance occupation combinations are not block particle numbers",
            conservation.unexplained
        ));
    }
    // Conserved block particle numbers put the targets on the boundary of the
    // family, where the pair couplings diverge. The limit of the fit is the
    // same pairwise model restricted to the configurations that respect them.
    let support = match conservation.blocks {
        Some(blocks) if opts.reduce_support && blocks.len() > 1 => Support::Blocks { n, blocks },
        Some(blocks) if opts.reduce_support => Support::Fixed { n, m: blocks.total() },
        _ => support,
    };
    if support != requested {
        info!("CGGE support reduced from {} to {} configurations", requested.size(), support.size());
    }
    if opts.backend == Backend::Exact {
        support.check_budget(opts.budget)?;
    }
    for w in &warnings {
        warn!("CGGE targets: {w}");
    }

    let feats = Features::new(n);
    let gge = fit_gge(targets);
    let mut theta = vec![0.0; feats.len()];
    theta[..n].copy_from_slice(&gge.lambdas);
    let is_sat = |j: usize| {
        let h = targets.means[j];
        !(SATURATION_EPS..=1.0 - SATURATION_EPS).contains(&h)
    };
    let mut free = Vec::new();
    for j in 0..n {
        if !is_sat(j) {
            free.push(j);
        } else {
            theta[j] = if targets.means[j] < 0.5 { LAMBDA_CLAMP } else { -LAMBDA_CLAMP };
        }
    }
    // A pair whose 2x2 occupation table has an empty cell sits on the edge
    // of the realizable region: the matching multiplier runs off to infinity.
    // Such cells are removed outright by a fixed energy penalty, and the pair
    // feature, now an affine function of the two occupations, is not fitted.
    let mut pinned = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if is_sat(i) || is_sat(j) || !possible_cells(&support, i, j).iter().all(|&c| c) {
                // constant or affine in n_i, n_j on the support: nothing to fit
                continue;
            }
            let cells = pair_cells(targets, i, j);
            if cells.iter().all(|&c| c > SATURATION_EPS) {
                free.push(feats.pair(i, j));
                continue;
            }
            let pair = feats.pair(i, j);
            for (k, &c) in cells.iter().enumerate() {
                if c > SATURATION_EPS {
                    continue;
                }
                // energy K * indicator(cell), expanded on 1, n_i, n_j, n_i n_j
                let (di, dj, dw) = match k {
                    0 => (0.0, 0.0, 1.0),
                    1 => (1.0, 0.0, -1.0),
                    2 => (0.0, 1.0, -1.0),
                    _ => (-1.0, -1.0, 1.0),
                };
                theta[i] += LAMBDA_CLAMP * di;
                theta[j] += LAMBDA_CLAMP * dj;
                theta[pair] += LAMBDA_CLAMP * dw;
            }
            pinned.push([i, j]);
        }
    }
    if !pinned.is_empty() {
        info!("CGGE: {} pair cells pinned to zero weight", pinned.len());
    }
    let problem = Problem { support, feats, targets: feats.targets(targets), free };
    let tol = opts.tolerance();
    let optimizer = match opts.optimizer {
        Optimizer::Auto if n <= opts.newton_max_modes || curvature_work(&support) <= NEWTON_MAX_WORK => {
            Optimizer::Newton
        }
        Optimizer::Auto => Optimizer::Lbfgs,
        o => o,
    };

    let (theta, iterations, gnorm, history) = match opts.backend {
        Backend::Exact => match optimizer {
            Optimizer::Lbfgs => lbfgs(&problem, theta, tol, opts)?,
            _ => newton(&problem, theta, tol, opts)?,
        },
        Backend::Sampled => sampled_newton(&problem, theta, tol, opts)?,
    };

    let mut energy = feats.to_energy(&theta);
    let normalized = support.size() <= opts.budget as u128;
    let (log_z, entropy, moments) = if normalized {
        let fm = family_moments(support, &energy, greedy_min_energy(support, &energy));
        (Some(fm.log_z), fm.entropy(&energy), Some(fm.targets()))
    } else {
        (None, f64::NAN, None)
    };
    let sat: Vec<usize> = (0..n).filter(|&j| is_sat(j)).collect();
    let fitted = |i: usize, j: usize| problem.free.binary_search(&feats.pair(i, j)).is_ok();
    support_gauge(&mut energy, &support, fitted);
    let w = energy.pairs.as_ref().expect("pairwise energy");
    let model = CggeModel {
        support,
        lambdas: energy.lambdas.clone(),
        v: w.iter().map(|x| 0.5 * x).collect(),
        log_z,
        backend: opts.backend,
        tolerance: tol,
        iterations,
        saturated: sat,
        pinned_pairs: pinned,
    };
    info!("CGGE fit: {iterations} iterations, gradient {gnorm:.3e}, {optimizer:?}");
    Ok(CggeFit { model, gradient_norm: gnorm, dual_history: history, entropy, moments, warnings, optimizer })
}

/// Occupation table of modes `i, j`: `[p11, p10, p01, p00]`.
fn pair_cells(t: &MomentTargets, i: usize, j: usize) -> [f64; 4] {
    let (hi, hj, c) = (t.means[i], t.means[j], t.pair(i, j));
    [c, hi - c, hj - c, 1.0 - hi - hj + c]
}

/// Which cells of the `(n_i, n_j)` table occur on `support`, ordered as in
/// [`pair_cells`].
fn possible_cells(support: &Support, i: usize, j: usize) -> [bool; 4] {
    let c = support.constraints();
    let room = |j: usize| {
        let b = c.block[j];
        if b == NO_BLOCK {
            return (usize::MAX, usize::MAX);
        }
        let size = c.block.iter().filter(|&&x| x == b).count();
        (c.need[b], size - c.need[b])
    };
    let ((fi, ei), (fj, ej)) = (room(i), room(j));
    if c.block[i] != NO_BLOCK && c.block[i] == c.block[j] {
        // one block: `fi` particles and `ei` holes shared by both modes
        [fi >= 2, fi >= 1 && ei >= 1, fi >= 1 && ei >= 1, ei >= 2]
    } else {
        [fi >= 1 && fj >= 1, fi >= 1 && ej >= 1, ei >= 1 && fj >= 1, ei >= 1 && ej >= 1]
    }
}

/// Within a fixed-`M` sector `w_ij -> w_ij + b_i + b_j` together with
/// `lambda_j -> lambda_j - (M - 1) b_j` leaves every energy unchanged. Pick
/// `b` so that each row of `w` sums to zero.
pub fn sector_gauge(energy: &mut PairwiseEnergy, m: usize) {
    let n = energy.n_modes();
    support_gauge(energy, &Support::Fixed { n, m }, |_, _| true);
}

/// Minimum-norm representative of `energy` among those equal on `support`.
///
/// With block particle numbers `N_B` fixed, `n_i (N_B - k_B)` vanishes on the
/// support for every mode `i` and block `B`, so
/// `w_ij -> w_ij + b_{i,B(j)} + b_{j,B(i)}` with
/// `lambda_i -> lambda_i + b_{i,B(i)} - sum_B k_B b_{i,B}` changes nothing.
/// The shifts minimizing the squared couplings over the pairs where `counted`
/// holds make every within-block row sum `sum_{j in B} w_ij` vanish; for a
/// single sector that is the zero-row-sum gauge. Uncounted pairs are shifted
/// along. The full space has no such freedom and is left alone.
pub fn support_gauge(energy: &mut PairwiseEnergy, support: &Support, counted: impl Fn(usize, usize) -> bool) {
    let n = energy.n_modes();
    if support.particles().is_none() || n < 3 {
        return;
    }
    let c = support.constraints();
    let nb = c.need.len();
    let w = energy.pairs.get_or_insert_with(|| vec![0.0; n * n]);
    let var = |i: usize, b: usize| i * nb + b;
    let mut gram = nalgebra::DMatrix::zeros(n * nb, n * nb);
    let mut rhs = DVector::zeros(n * nb);
    for i in 0..n {
        for j in i + 1..n {
            if !counted(i, j) {
                continue;
            }
            let (a, b) = (var(i, c.block[j]), var(j, c.block[i]));
            gram[(a, a)] += 1.0;
            gram[(b, b)] += 1.0;
            gram[(a, b)] += 1.0;
            gram[(b, a)] += 1.0;
            rhs[a] -= w[i * n + j];
            rhs[b] -= w[i * n + j];
        }
    }
    let x = pseudo_solve(&gram, &rhs, 1e-12);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[i * n + j] += x[var(i, c.block[j])] + x[var(j, c.block[i])];
            }
        }
        let shift: f64 = (0..nb).map(|b| c.need[b] as f64 * x[var(i, b)]).sum::<f64>();
        energy.lambdas[i] += x[var(i, c.block[i])] - shift;
    }
}

type Outcome = (Vec<f64>, usize, f64, Vec<f64>);

fn newton(p: &Problem, mut theta: Vec<f64>, tol: f64, opts: &CggeOptions) -> Result<Outcome> {
    let mut e_ref = greedy_min_energy(p.support, &p.feats.to_energy(&theta));
    let (mut cur, mut cov) = p.eval_curved(&theta, &mut e_ref);
    let mut history = vec![cur.dual];
    let mut iter = 0;
    while cur.gnorm > tol {
        if iter >= opts.max_iter {
            return Err(Error::NonConvergence { iterations: iter, gradient_norm: cur.gnorm });
        }
        iter += 1;
        let h = cov.select_rows(p.free.iter()).select_columns(p.free.iter());
        let g = p.restrict(&cur.grad);
        // descent on L: theta -= H^+ (t - <f>)
        let dir = -pseudo_solve(&h, &g, 1e-13);
        let slope = -g.dot(&dir).abs();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = p.step(&theta, &dir, alpha);
            let (ev, c) = p.eval_curved(&trial, &mut e_ref);
            if accepts(&cur, &ev, 1e-4 * alpha * slope) {
                accepted = Some((trial, ev, c));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((t, ev, c)) => {
                debug!("newton {iter}: dual {:.15e} grad {:.3e} step {alpha}", ev.dual, ev.gnorm);
                theta = t;
                cur = ev;
                cov = c;
                history.push(cur.dual);
            }
            None => return Err(Error::NonConvergence { iterations: iter, gradient_norm: cur.gnorm }),
        }
    }
    Ok((theta, iter, cur.gnorm, history))
}

fn lbfgs(p: &Problem, mut theta: Vec<f64>, tol: f64, opts: &CggeOptions) -> Result<Outcome> {
    let mut e_ref = greedy_min_energy(p.support, &p.feats.to_energy(&theta));
    let mut cur = p.eval(&theta, &mut e_ref);
    let mut history = vec![cur.dual];
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut iter = 0;
    while cur.gnorm > tol {
        if iter >= opts.max_iter {
            return Err(Error::NonConvergence { iterations: iter, gradient_norm: cur.gnorm });
        }
        iter += 1;
        let g = p.restrict(&cur.grad);
        // exact Hessian diagonal of binary features
        let diag = DVector::from_iterator(
            p.free.len(),
            p.free.iter().map(|&a| {
                let x = cur.expectations[a];
                (x * (1.0 - x)).max(1e-12)
            }),
        );
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / y_hist[i].dot(&s_hist[i]);
            alphas[i] = rho * s_hist[i].dot(&q);
            q -= &y_hist[i] * alphas[i];
        }
        let mut r = q.component_div(&diag);
        for i in 0..k {
            let rho = 1.0 / y_hist[i].dot(&s_hist[i]);
            let beta = rho * y_hist[i].dot(&r);
            r += &s_hist[i] * (alphas[i] - beta);
        }
        let mut dir = -r;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = -g.component_div(&diag);
            slope = g.dot(&dir);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = p.step(&theta, &dir, alpha);
            let ev = p.eval(&trial, &mut e_ref);
            if accepts(&cur, &ev, 1e-4 * alpha * slope) {
                accepted = Some((trial, ev));
                break;
            }
            alpha *= 0.5;
        }
        let Some((t, ev)) = accepted else {
            return Err(Error::NonConvergence { iterations: iter, gradient_norm: cur.gnorm });
        };
        let s = &dir * alpha;
        let y = p.restrict(&ev.grad) - &g;
        if s.dot(&y) > 1e-16 * s.norm() * y.norm() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.lbfgs_memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        debug!("lbfgs {iter}: dual {:.15e} grad {:.3e} step {alpha}", ev.dual, ev.gnorm);
        theta = t;
        cur = ev;
        history.push(cur.dual);
    }
    Ok((theta, iter, cur.gnorm, history))
}

fn sampled_newton(p: &Problem, mut theta: Vec<f64>, tol: f64, opts: &CggeOptions) -> Result<Outcome> {
    let so = opts.sampler;
    let mut sampler = GibbsSampler::new(p.support, &p.feats.to_energy(&theta), so.seed)?;
    for _ in 0..so.burn_in_sweeps {
        sampler.sweep();
    }
    let mut samples = so.samples.max(1);
    let mut best = f64::INFINITY;
    let mut iter = 0;
    loop {
        let (mean, cov) = sampler.estimate(samples, so.thinning);
        let mut gnorm: f64 = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for &a in &p.free {
            grad[a] = p.targets[a] - mean[a];
            gnorm = gnorm.max(grad[a].abs());
        }
        debug!("sampled {iter}: grad {gnorm:.3e} with {samples} samples");
        if gnorm <= tol {
            return Ok((theta, iter, gnorm, Vec::new()));
        }
        if iter >= opts.max_iter {
            return Err(Error::NonConvergence { iterations: iter, gradient_norm: gnorm });
        }
        // no longer improving: the estimate is noise-limited
        if gnorm > 0.8 * best {
            if samples >= so.max_samples {
                return Err(Error::NonConvergence { iterations: iter, gradient_norm: gnorm });
            }
            samples = (samples * 2).min(so.max_samples);
        }
        best = best.min(gnorm);
        iter += 1;
        let h = cov.select_rows(p.free.iter()).select_columns(p.free.iter());
        let g = p.restrict(&grad);
        let mut dir = -pseudo_solve(&h, &g, 1e-8);
        let biggest = dir.amax();
        if biggest > 1.0 {
            dir /= biggest;
        }
        theta = p.step(&theta, &dir, 1.0);
        sampler.set_energy(&p.feats.to_energy(&theta));
        for _ in 0..so.burn_in_sweeps / 4 {
            sampler.sweep();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::model::model_distribution;
    use crate::fock::distribution::{de_distribution, de_entropy, enumerated_moments, DiagonalDistribution};
    use crate::fock::config::{support_configs, FockConfig};
    use crate::fock::moments::wick_moments;
    use crate::lattice::{FermiRule, Quench, QuenchParams};

    /// Rounding leaves ~1e-21 of diagonal-ensemble weight on configurations
    /// that break a conservation law; the model gives those exactly zero.
    fn kl(p: &DiagonalDistribution, q: &FockModel) -> f64 {
        let outside: f64 = p.iter().filter(|(c, _)| !q.support.contains(*c)).map(|(_, x)| x).sum();
        assert!(outside < 1e-12, "{outside}");
        p.iter()
            .filter(|(c, x)| *x > 0.0 && q.support.contains(*c))
            .map(|(c, x)| x * (x.ln() - q.log_prob(c)))
            .sum()
    }

    #[test]
    fn independent_targets_give_zero_couplings() {
        let t = MomentTargets::independent(vec![0.2, 0.7, 0.5, 0.9, 0.35]);
        let opts = CggeOptions { support: SupportKind::Full, ..Default::default() };
        let fit = fit_cgge(&t, &opts).unwrap();
        let gge = fit_gge(&t);
        assert!(fit.model.v.iter().all(|v| v.abs() < 1e-8), "{:?}", fit.model.v);
        for (a, b) in fit.model.lambdas.iter().zip(&gge.lambdas) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(fit.model.v_at(2, 2), 0.0);
    }

    #[test]
    fn hand_built_three_mode_distribution() {
        // arbitrary strictly positive weights over the 8 configurations
        let probs = [0.05, 0.1, 0.2, 0.15, 0.08, 0.12, 0.17, 0.13];
        let support = Support::Full { n: 3 };
        let configs = support_configs(support, DEFAULT_BUDGET).unwrap();
        let d = DiagonalDistribution { support, configs: configs.clone(), probs: probs.to_vec() };
        let t = MomentTargets::from_distribution(&d);
        let opts = CggeOptions { support: SupportKind::Full, tol: Some(1e-12), ..Default::default() };
        let fit = fit_cgge(&t, &opts).unwrap();
        let model = fit.model.to_fock_model().unwrap();
        // explicit enumeration of the fitted distribution
        let q: Vec<f64> = configs.iter().map(|&c| model.prob(c)).collect();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let qd = DiagonalDistribution { support, configs, probs: q };
        let (means, pairs) = enumerated_moments(&qd);
        for j in 0..3 {
            assert!((means[j] - t.means[j]).abs() < 1e-10);
            for k in 0..3 {
                assert!((pairs[j * 3 + k] - t.pair(j, k)).abs() < 1e-10);
            }
        }
        // moment matching makes the KL gap equal to the entropy gap
        let s_model = de_entropy(&qd);
        assert!((kl(&d, &model) - (s_model - de_entropy(&d))).abs() < 1e-10);
        assert!((fit.entropy - s_model).abs() < 1e-10);
    }

    fn quench_targets(n: usize, j: f64) -> (Quench, MomentTargets, DiagonalDistribution) {
        let q = Quench::from_params(&QuenchParams::half_filled(n, j, 5), FermiRule::Error).unwrap();
        let t = wick_moments(&q.correlations);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        (q, t, d)
    }

    #[test]
    fn sector_fit_identities_n10() {
        let (_, t, d) = quench_targets(10, 12.0);
        let fit = fit_cgge(&t, &CggeOptions::default()).unwrap();
        assert!(fit.gradient_norm <= EXACT_TOL);
        for w in fit.dual_history.windows(2) {
            assert!(w[1] <= w[0] + DUAL_NOISE * w[0].abs().max(1.0), "{w:?}");
        }
        let model = fit.model.to_fock_model().unwrap();
        let q = model_distribution(&model, DEFAULT_BUDGET).unwrap();
        let s_de = de_entropy(&d);
        let s_model = de_entropy(&q);
        assert!((s_model - fit.entropy).abs() < 1e-8);
        assert!((kl(&d, &model) - (s_model - s_de)).abs() < 1e-6);
        let gge = fit_gge(&t);
        assert!(s_de <= s_model + 1e-8 && s_model <= gge.entropy + 1e-8);
        // gauge: zero diagonal, symmetric, fitted couplings sum to zero
        // along every row within every block
        let n = 10;
        let c = fit.model.support.constraints();
        assert!(matches!(fit.model.support, Support::Blocks { .. }));
        for i in 0..n {
            assert_eq!(fit.model.v_at(i, i), 0.0);
            for b in 0..c.need.len() {
                let row: f64 = (0..n)
                    .filter(|&j| j != i && c.block[j] == b && fit.model.is_fitted(i, j))
                    .map(|j| fit.model.v_at(i, j))
                    .sum();
                assert!(row.abs() < 1e-9, "row {i} block {b} sums to {row}");
            }
            for j in 0..n {
                assert_eq!(fit.model.v_at(i, j), fit.model.v_at(j, i));
            }
        }
    }

    #[test]
    fn lbfgs_agrees_with_newton() {
        let (_, t, _) = quench_targets(10, 4.0);
        let a = fit_cgge(&t, &CggeOptions::default()).unwrap();
        let b = fit_cgge(&t, &CggeOptions { optimizer: Optimizer::Lbfgs, ..Default::default() }).unwrap();
        assert!(b.gradient_norm <= EXACT_TOL);
        assert!((a.entropy - b.entropy).abs() < 1e-9);
        for (x, y) in a.model.v.iter().zip(&b.model.v) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
        for w in b.dual_history.windows(2) {
            assert!(w[1] <= w[0] + DUAL_NOISE * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn gauge_preserves_sector_energies() {
        let n = 6;
        let mut e = PairwiseEnergy {
            lambdas: vec![0.1, -0.3, 0.7, 0.2, -1.0, 0.4],
            pairs: Some((0..36).map(|k| if k / 6 == k % 6 { 0.0 } else { ((k / 6 + k % 6) as f64).sin() }).collect()),
        };
        let before: Vec<f64> = support_configs(Support::Fixed { n, m: 3 }, DEFAULT_BUDGET)
            .unwrap()
            .iter()
            .map(|c| e.energy(c.0))
            .collect();
        sector_gauge(&mut e, 3);
        let after: Vec<f64> = support_configs(Support::Fixed { n, m: 3 }, DEFAULT_BUDGET)
            .unwrap()
            .iter()
            .map(|c| e.energy(c.0))
            .collect();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = e.pairs.unwrap();
        for i in 0..n {
            assert!((0..n).map(|j| w[i * n + j]).sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn block_gauge_preserves_energies() {
        let n = 7;
        let blocks = crate::fock::config::Blocks::new(&[(0b101_0011, 2), (0b010_1100, 2)]).unwrap();
        let support = Support::Blocks { n, blocks };
        let mut e = PairwiseEnergy {
            lambdas: vec![0.1, -0.3, 0.7, 0.2, -1.0, 0.4, 0.9],
            pairs: Some((0..49).map(|k| if k / 7 == k % 7 { 0.0 } else { ((k / 7 + k % 7) as f64).cos() }).collect()),
        };
        let configs = support_configs(support, DEFAULT_BUDGET).unwrap();
        let before: Vec<f64> = configs.iter().map(|c| e.energy(c.0)).collect();
        let norm = |e: &PairwiseEnergy| e.pairs.as_ref().unwrap().iter().map(|x| x * x).sum::<f64>();
        let n0 = norm(&e);
        support_gauge(&mut e, &support, |_, _| true);
        for (c, b) in configs.iter().zip(&before) {
            assert!((e.energy(c.0) - b).abs() < 1e-12);
        }
        assert!(norm(&e) <= n0);
        let w = e.pairs.as_ref().unwrap();
        for i in 0..n {
            for (mask, _) in blocks.iter() {
                let row: f64 = FockConfig(mask).modes().filter(|&j| j != i).map(|j| w[i * n + j]).sum();
                assert!(row.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_quench_pins_everything() {
        let p = QuenchParams::half_filled(10, 0.0, 5);
        let q = Quench::between(&p, &p, FermiRule::Error).unwrap();
        let t = wick_moments(&q.correlations);
        let fit = fit_cgge(&t, &CggeOptions::default()).unwrap();
        assert_eq!(fit.model.saturated.len(), 10);
        assert!(fit.entropy.abs() < 1e-12);
        let model = fit.model.to_fock_model().unwrap();
        assert!((model.prob(FockConfig::from_modes(&[0, 1, 2, 3, 4])) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (_, t, _) = quench_targets(10, 12.0);
        let fit = fit_cgge(&t, &CggeOptions::default()).unwrap();
        let file = fit.model.to_file();
        assert_eq!(file.v.len(), 45);
        let back = CggeModel::from_file(&file).unwrap();
        assert_eq!(back, fit.model);
    }

    #[test]
    fn sampled_backend_tracks_exact_fit() {
        let q = Quench::from_params(
            &QuenchParams::half_filled(6, 4.0, 3),
            FermiRule::Error,
        )
        .unwrap();
        let t = wick_moments(&q.correlations);
        let exact = fit_cgge(&t, &CggeOptions::default()).unwrap();
        let opts = CggeOptions {
            backend: Backend::Sampled,
            tol: Some(5e-3),
            max_iter: 100,
            ..Default::default()
        };
        let a = fit_cgge(&t, &opts).unwrap();
        let b = fit_cgge(&t, &opts).unwrap();
        assert_eq!(a.model, b.model, "seeded runs must agree");
        assert!((a.entropy - exact.entropy).abs() < 1e-2, "{} vs {}", a.entropy, exact.entropy);
        let moments = a.moments.unwrap();
        for k in 0..36 {
            assert!((moments.pairs[k] - t.pairs[k]).abs() < 2e-2);
        }
    }

    #[test]
    fn rejects_fractional_particle_number_in_sector() {
        let t = MomentTargets::independent(vec![0.3, 0.3]);
        assert!(matches!(fit_cgge(&t, &CggeOptions::default()), Err(Error::SupportMismatch(_))));
    }
}
