//! Operator-splitting layer.
//!
//! The synchronous update is the fixed-point map
//! `𝒯 = (Id + Φ⁻¹𝒰)⁻¹ (Id − Φ⁻¹ℬ)` on the stacked iterate `w = (μ, z, P^g)`
//! with
//!
//! ```text
//!       ⎡σ_μ⁻¹I  L      I     ⎤        ⎡Lμ + P^d⎤          ⎡−P^g − Lz      ⎤
//!   Φ = ⎢L       σ_z⁻¹I 0     ⎥,  ℬ(w)=⎢0       ⎥,   𝒰(w) = ⎢Lμ             ⎥
//!       ⎣I       0      σ_g⁻¹I⎦        ⎣∇f(P^g) ⎦          ⎣μ + N_Ω(P^g)   ⎦
//! ```
//!
//! Because Φ is block lower-triangular in the right places the resolvent is
//! explicit: μ̃ first, then z̃ from μ̃, then P̃ by projection. [`apply_t`]
//! evaluates it agent by agent through [`block_update`], the same kernel the
//! asynchronous engine runs on stale neighbor data. The dense matrices here
//! ([`PhiMetric`], [`residual_eq11`]) are an independent route used to check
//! that kernel.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::par::{self, Execution};
use crate::problem::{BoxSet, DispatchProblem};
use crate::topology::{spectral_min, CommGraph};

/// Eigenvalue slack accepted when checking Φ − κI ⪰ 0.
pub const PSD_SLACK: f64 = 1e-10;
const SIGMA_GRID_START: f64 = 1.0;
const SIGMA_GRID_RATIO: f64 = 0.99;
const SIGMA_GRID_STEPS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepSizeError {
    #[error("kappa_margin must be positive, got {0}")]
    BadMargin(f64),
    #[error("step sizes must be positive and finite")]
    BadSigma,
    #[error("relaxation eta must lie in (0, 1), got {0}")]
    BadEta(f64),
    #[error("no step size in the search grid makes Φ − κI positive semi-definite (κ = {kappa})")]
    NoValidStep { kappa: f64 },
    #[error("Φ − κI is not positive semi-definite: min eigenvalue {min_eig}")]
    NotPositiveSemidefinite { min_eig: f64 },
}

/// Stacked controller state of all agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateVector {
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub p_g: Vec<f64>,
}

impl IterateVector {
    pub fn zeros(n: usize) -> Self {
        Self { mu: vec![0.0; n], z: vec![0.0; n], p_g: vec![0.0; n] }
    }

    /// μ = z = 0, P^g at the lower generation limits.
    pub fn initial(problem: &DispatchProblem) -> Self {
        let mut w = Self::zeros(problem.n());
        w.p_g = problem.bounds().lower;
        w
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Column vector `(μ, z, P^g)` of length 3n.
    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.n(),
            self.mu.iter().chain(&self.z).chain(&self.p_g).copied(),
        )
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        let n = v.len() / 3;
        Self {
            mu: v.rows(0, n).iter().copied().collect(),
            z: v.rows(n, n).iter().copied().collect(),
            p_g: v.rows(2 * n, n).iter().copied().collect(),
        }
    }

    pub fn block(&self, i: usize) -> [f64; 3] {
        [self.mu[i], self.z[i], self.p_g[i]]
    }

    pub fn set_block(&mut self, i: usize, b: [f64; 3]) {
        self.mu[i] = b[0];
        self.z[i] = b[1];
        self.p_g[i] = b[2];
    }

    /// ‖self − other‖_∞ over all 3n coordinates.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.mu
            .iter()
            .zip(&other.mu)
            .chain(self.z.iter().zip(&other.z))
            .chain(self.p_g.iter().zip(&other.p_g))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mu_spread(&self) -> f64 {
        spread(&self.mu)
    }
}

pub(crate) fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Step sizes, the constants of the averagedness argument, and the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSizes {
    pub sigma_mu: f64,
    pub sigma_z: f64,
    pub sigma_g: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub eta: f64,
    /// Averagedness constant 2κζ/(4κζ − 1) of 𝒯.
    pub alpha: f64,
}

/// ζ = min(1/σ_max², a_min/a_max²); the first term is dropped when the graph
/// has no edges.
pub fn zeta(problem: &DispatchProblem, graph: &CommGraph) -> f64 {
    let cost_term = problem.a_min() / problem.a_max().powi(2);
    let s = graph.sigma_max();
    if s > 0.0 {
        (1.0 / (s * s)).min(cost_term)
    } else {
        cost_term
    }
}

pub fn averaged_alpha(kappa: f64, zeta: f64) -> f64 {
    2.0 * kappa * zeta / (4.0 * kappa * zeta - 1.0)
}

/// Relaxation bound (1/(1 + 2χ/√n)) · (4κζ − 1)/(2κζ).
pub fn eta_max(chi: f64, n: usize, kappa: f64, zeta: f64) -> f64 {
    let kz = kappa * zeta;
    (1.0 / (1.0 + 2.0 * chi / (n as f64).sqrt())) * (4.0 * kz - 1.0) / (2.0 * kz)
}

/// Largest admissible staleness for a given relaxation: √n (1 − η)/(2η).
pub fn chi_max(eta: f64, n: usize) -> f64 {
    (n as f64).sqrt() * (1.0 - eta) / (2.0 * eta)
}

pub fn project_box(x: &[f64], bx: &BoxSet) -> Vec<f64> {
    bx.project(x)
}

impl StepSizes {
    /// Equal σ_μ = σ_z = σ_g = σ, the largest grid value with Φ − κI ⪰ 0,
    /// where κ = 1/(2ζ) + `kappa_margin`. The relaxation defaults to
    /// 0.9 · `eta_max(0, …)` and can be replaced with [`StepSizes::with_eta`].
    pub fn choose(
        problem: &DispatchProblem,
        graph: &CommGraph,
        kappa_margin: f64,
    ) -> Result<Self, StepSizeError> {
        if !(kappa_margin > 0.0 && kappa_margin.is_finite()) {
            return Err(StepSizeError::BadMargin(kappa_margin));
        }
        let zeta = zeta(problem, graph);
        let kappa = 1.0 / (2.0 * zeta) + kappa_margin;
        let mut sigma = SIGMA_GRID_START;
        for _ in 0..SIGMA_GRID_STEPS {
            let phi = PhiMetric::new(graph, sigma, sigma, sigma);
            if phi.min_eig_shifted(kappa) >= -PSD_SLACK {
                let eta = (0.9 * eta_max(0.0, problem.n(), kappa, zeta)).min(0.999);
                return Ok(Self {
                    sigma_mu: sigma,
                    sigma_z: sigma,
                    sigma_g: sigma,
                    kappa,
                    zeta,
                    eta,
                    alpha: averaged_alpha(kappa, zeta),
                });
            }
            sigma *= SIGMA_GRID_RATIO;
        }
        Err(StepSizeError::NoValidStep { kappa })
    }

    /// Explicit sigmas; still verified against Φ − κI ⪰ 0.
    pub fn from_sigmas(
        problem: &DispatchProblem,
        graph: &CommGraph,
        kappa_margin: f64,
        sigmas: (f64, f64, f64),
        eta: f64,
    ) -> Result<Self, StepSizeError> {
        if !(kappa_margin > 0.0 && kappa_margin.is_finite()) {
            return Err(StepSizeError::BadMargin(kappa_margin));
        }
        let (sm, sz, sg) = sigmas;
        if ![sm, sz, sg].iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(StepSizeError::BadSigma);
        }
        let zeta = zeta(problem, graph);
        let kappa = 1.0 / (2.0 * zeta) + kappa_margin;
        let min_eig = PhiMetric::new(graph, sm, sz, sg).min_eig_shifted(kappa);
        if min_eig < -PSD_SLACK {
            return Err(StepSizeError::NotPositiveSemidefinite { min_eig });
        }
        Self { sigma_mu: sm, sigma_z: sz, sigma_g: sg, kappa, zeta, eta: 0.5, alpha: averaged_alpha(kappa, zeta) }
            .with_eta(eta)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self, StepSizeError> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(StepSizeError::BadEta(eta));
        }
        self.eta = eta;
        Ok(self)
    }

    /// Relaxation bound for staleness `chi` on `n` agents.
    pub fn eta_bound(&self, chi: f64, n: usize) -> f64 {
        eta_max(chi, n, self.kappa, self.zeta)
    }
}

/// The preconditioner Φ and the geometry it induces.
#[derive(Debug, Clone)]
pub struct PhiMetric {
    phi: DMatrix<f64>,
}

impl PhiMetric {
    pub fn new(graph: &CommGraph, sigma_mu: f64, sigma_z: f64, sigma_g: f64) -> Self {
        let n = graph.n();
        let l = graph.laplacian();
        let mut phi = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            phi[(i, i)] = 1.0 / sigma_mu;
            phi[(n + i, n + i)] = 1.0 / sigma_z;
            phi[(2 * n + i, 2 * n + i)] = 1.0 / sigma_g;
            phi[(i, 2 * n + i)] = 1.0;
            phi[(2 * n + i, i)] = 1.0;
            for j in 0..n {
                phi[(i, n + j)] = l[(i, j)];
                phi[(n + i, j)] = l[(i, j)];
            }
        }
        Self { phi }
    }

    pub fn from_steps(graph: &CommGraph, ss: &StepSizes) -> Self {
        Self::new(graph, ss.sigma_mu, ss.sigma_z, ss.sigma_g)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Smallest eigenvalue of Φ − κI.
    pub fn min_eig_shifted(&self, kappa: f64) -> f64 {
        let n = self.phi.nrows();
        spectral_min(&(&self.phi - DMatrix::identity(n, n) * kappa))
    }

    pub fn min_eig(&self) -> f64 {
        SymmetricEigen::new(self.phi.clone()).eigenvalues.min()
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (&self.phi * x).dot(y)
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    pub fn dist(&self, a: &IterateVector, b: &IterateVector) -> f64 {
        self.norm(&(a.to_dvector() - b.to_dvector()))
    }
}

/// Read access to the (possibly stale) state an agent sees.
pub trait BlockInputs {
    fn mu(&self, j: usize) -> f64;
    fn z(&self, j: usize) -> f64;
    /// P^g_j − P^d_j.
    fn imbalance(&self, j: usize) -> f64;
}

struct Current<'a> {
    w: &'a IterateVector,
    demand: &'a [f64],
}

impl BlockInputs for Current<'_> {
    fn mu(&self, j: usize) -> f64 {
        self.w.mu[j]
    }
    fn z(&self, j: usize) -> f64 {
        self.w.z[j]
    }
    fn imbalance(&self, j: usize) -> f64 {
        self.w.p_g[j] - self.demand[j]
    }
}

/// Block `i` of 𝒯 evaluated on `inputs`, where agent `i`'s own generation is
/// `p_own` and its box is `[lo, hi]`.
///
/// z̃ is written with the entries ℓ_ij of L² so that it only needs one- and
/// two-hop values:
/// z̃_i = z_i − σ_z[(Lμ)_i − 2σ_μ(L²μ)_i + 2σ_μ(L²z)_i + 2σ_μ(L(P^g − P^d))_i].
#[allow(clippy::too_many_arguments)]
pub fn block_update(
    i: usize,
    inputs: &impl BlockInputs,
    p_own: f64,
    lo: f64,
    hi: f64,
    problem: &DispatchProblem,
    graph: &CommGraph,
    ss: &StepSizes,
) -> [f64; 3] {
    let mu_i = inputs.mu(i);
    let z_i = inputs.z(i);
    let s_i = inputs.imbalance(i);

    let mut l_mu = 0.0;
    let mut l_z = 0.0;
    let mut l_s = 0.0;
    for &j in graph.one_hop(i) {
        l_mu += mu_i - inputs.mu(j);
        l_z += z_i - inputs.z(j);
        l_s += s_i - inputs.imbalance(j);
    }
    let mu_t = mu_i + ss.sigma_mu * (-l_mu + l_z + s_i);

    // Σ_{j≠i} ℓ_ij (x_i − x_j) = −(L²x)_i
    let mut sq_mu = 0.0;
    let mut sq_z = 0.0;
    for &(j, l) in graph.sq_coeffs(i) {
        sq_mu += l * (mu_i - inputs.mu(j));
        sq_z += l * (z_i - inputs.z(j));
    }
    let two_sm = 2.0 * ss.sigma_mu;
    let z_t = z_i - ss.sigma_z * (l_mu + two_sm * sq_mu - two_sm * sq_z + two_sm * l_s);

    let grad = problem.grad(i, p_own);
    let p_t = (p_own - ss.sigma_g * (grad + 2.0 * mu_t - mu_i)).max(lo).min(hi);
    [mu_t, z_t, p_t]
}

/// 𝒯(w) with the problem's own generation box.
pub fn apply_t(w: &IterateVector, ss: &StepSizes, problem: &DispatchProblem, graph: &CommGraph) -> IterateVector {
    apply_t_in(w, ss, problem, graph, &problem.bounds())
}

/// 𝒯(w) with an explicit box (plug-n-play collapses an agent's box).
pub fn apply_t_in(
    w: &IterateVector,
    ss: &StepSizes,
    problem: &DispatchProblem,
    graph: &CommGraph,
    bx: &BoxSet,
) -> IterateVector {
    let demand = problem.demands();
    let view = Current { w, demand: &demand };
    let mut out = IterateVector::zeros(w.n());
    for i in 0..w.n() {
        let blk = block_update(i, &view, w.p_g[i], bx.lower[i], bx.upper[i], problem, graph, ss);
        out.set_block(i, blk);
    }
    out
}

/// ℛ = (𝒯 − (1 − α) Id)/α, the nonexpansive part of the averaged 𝒯.
pub fn apply_r(w: &IterateVector, ss: &StepSizes, problem: &DispatchProblem, graph: &CommGraph) -> IterateVector {
    let t = apply_t(w, ss, problem, graph).to_dvector();
    let a = ss.alpha;
    IterateVector::from_dvector(&((t - w.to_dvector() * (1.0 - a)) / a))
}

/// ‖ℬ(w) + 𝒰(w̃) + Φ(w̃ − w)‖₂ evaluated from dense matrices.
///
/// The N_Ω row is measured as the distance of the required normal vector
/// to the normal cone of Ω at P̃, which is zero exactly when P̃ is the
/// projection prescribed by 𝒫_Ω = (Id + N_Ω)⁻¹.
pub fn residual_eq11(
    w: &IterateVector,
    w_tilde: &IterateVector,
    ss: &StepSizes,
    problem: &DispatchProblem,
    graph: &CommGraph,
) -> f64 {
    let n = w.n();
    let l = graph.laplacian();
    let mu = DVector::from_column_slice(&w.mu);
    let z = DVector::from_column_slice(&w.z);
    let p = DVector::from_column_slice(&w.p_g);
    let mu_t = DVector::from_column_slice(&w_tilde.mu);
    let z_t = DVector::from_column_slice(&w_tilde.z);
    let p_t = DVector::from_column_slice(&w_tilde.p_g);
    let pd = DVector::from_vec(problem.demands());
    let grad = DVector::from_fn(n, |i, _| problem.grad(i, w.p_g[i]));

    let d_mu = &mu_t - &mu;
    let d_z = &z_t - &z;
    let d_p = &p_t - &p;

    let r1 = (l * &mu + &pd) + (-&p_t - l * &z_t) + (&d_mu / ss.sigma_mu + l * &d_z + &d_p);
    let r2 = l * &mu_t + (l * &d_mu + &d_z / ss.sigma_z);
    let need = -(grad + &mu_t + (&d_mu + &d_p / ss.sigma_g));

    let bx = problem.bounds();
    let r3 = DVector::from_fn(n, |i, _| {
        normal_cone_distance(need[i], p_t[i], bx.lower[i], bx.upper[i])
    });
    (r1.norm_squared() + r2.norm_squared() + r3.norm_squared()).sqrt()
}

/// Distance from `v` to N_[lo,hi](x) (x assumed inside the interval).
fn normal_cone_distance(v: f64, x: f64, lo: f64, hi: f64) -> f64 {
    let at = |b: f64| (x - b).abs() <= 1e-12 * (1.0 + b.abs());
    match (at(lo), at(hi)) {
        (true, true) => 0.0,
        (true, false) => v.max(0.0),
        (false, true) => (-v).max(0.0),
        (false, false) => v.abs(),
    }
}

/// A fixed point of 𝒯 built from the centralized solution: μ_i = μ*,
/// L z* = P^d − P^{g*} (least squares; consistent since the right side sums
/// to zero), P^g = P^{g*}.
pub fn fixed_point(problem: &DispatchProblem, graph: &CommGraph, p_star: &[f64], mu_star: f64) -> IterateVector {
    let n = problem.n();
    let rhs = DVector::from_fn(n, |i, _| problem.demand(i) - p_star[i]);
    let z = if graph.sigma_max() > 0.0 {
        let svd = graph.laplacian().clone().svd(true, true);
        svd.solve(&rhs, 1e-9).expect("svd with u and v")
    } else {
        DVector::zeros(n)
    };
    IterateVector { mu: vec![mu_star; n], z: z.iter().copied().collect(), p_g: p_star.to_vec() }
}

/// Random iterate spread around the box, for property checks.
pub fn random_iterate(rng: &mut impl Rng, problem: &DispatchProblem) -> IterateVector {
    let n = problem.n();
    let bx = problem.bounds();
    IterateVector {
        mu: (0..n).map(|_| rng.random_range(-120.0..20.0)).collect(),
        z: (0..n).map(|_| rng.random_range(-60.0..60.0)).collect(),
        p_g: (0..n).map(|i| rng.random_range(bx.lower[i] - 10.0..bx.upper[i] + 10.0)).collect(),
    }
}

/// Outcome of the randomized operator checks.
#[derive(Debug, Clone, Serialize)]
pub struct OperatorReport {
    pub samples: usize,
    pub seed: u64,
    pub alpha: f64,
    /// max over samples of residual_eq11(w, 𝒯w)/(1 + ‖w‖).
    pub max_scaled_residual: f64,
    /// max of ‖𝒯x − 𝒯y‖_Φ / ‖x − y‖_Φ.
    pub max_ratio_t: f64,
    pub max_ratio_r: f64,
    /// ‖𝒯w* − w*‖_∞ and ‖ℛw* − w*‖_∞.
    pub fixed_point_t: f64,
    pub fixed_point_r: f64,
    /// max |𝒯 − ((1 − α) Id + α ℛ)| over samples.
    pub max_recomposition: f64,
    pub min_eig_phi_minus_kappa: f64,
    pub pass: bool,
}

pub fn check_operators(
    problem: &DispatchProblem,
    graph: &CommGraph,
    ss: &StepSizes,
    w_star: &IterateVector,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> OperatorReport {
    let phi = PhiMetric::from_steps(graph, ss);
    let idx: Vec<u64> = (0..samples as u64).collect();
    let per_sample = par::map(exec, &idx, |&s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ s);
        let x = random_iterate(&mut rng, problem);
        let y = random_iterate(&mut rng, problem);
        let tx = apply_t(&x, ss, problem, graph);
        let ty = apply_t(&y, ss, problem, graph);
        let res = residual_eq11(&x, &tx, ss, problem, graph) / (1.0 + x.to_dvector().norm());
        let dxy = phi.dist(&x, &y);
        let ratio_t = phi.dist(&tx, &ty) / dxy;
        let rx = apply_r(&x, ss, problem, graph);
        let ry = apply_r(&y, ss, problem, graph);
        let ratio_r = phi.dist(&rx, &ry) / dxy;
        let recomposed = rx.to_dvector() * ss.alpha + x.to_dvector() * (1.0 - ss.alpha);
        let recomposition = (recomposed - tx.to_dvector()).amax();
        (res, ratio_t, ratio_r, recomposition)
    });
    let fold = |f: fn(&(f64, f64, f64, f64)) -> f64| per_sample.iter().map(f).fold(0.0, f64::max);
    let max_scaled_residual = fold(|s| s.0);
    let max_ratio_t = fold(|s| s.1);
    let max_ratio_r = fold(|s| s.2);
    let max_recomposition = fold(|s| s.3);
    let fixed_point_t = apply_t(w_star, ss, problem, graph).max_abs_diff(w_star);
    let fixed_point_r = apply_r(w_star, ss, problem, graph).max_abs_diff(w_star);
    let min_eig_phi_minus_kappa = phi.min_eig_shifted(ss.kappa);
    let pass = max_scaled_residual <= 1e-9
        && max_ratio_t <= 1.0 + 1e-9
        && max_ratio_r <= 1.0 + 1e-9
        && fixed_point_t <= 1e-9
        && fixed_point_r <= 1e-9
        && min_eig_phi_minus_kappa >= -PSD_SLACK;
    OperatorReport {
        samples,
        seed,
        alpha: ss.alpha,
        max_scaled_residual,
        max_ratio_t,
        max_ratio_r,
        fixed_point_t,
        fixed_point_r,
        max_recomposition,
        min_eig_phi_minus_kappa,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::oracle::solve_centralized;
    use crate::problem::{AgentSpec, BusKind};

    fn single(a: f64, b: f64, d: f64) -> (DispatchProblem, CommGraph) {
        let p = DispatchProblem::new(vec![AgentSpec { a, b, p_min: 0.0, p_max: 100.0, p_d: d, kind: BusKind::Ac }]).unwrap();
        (p, CommGraph::build(1, &[]).unwrap())
    }

    /// The compact matrix form of 𝒯, written directly with nalgebra.
    fn apply_t_dense(w: &IterateVector, ss: &StepSizes, problem: &DispatchProblem, graph: &CommGraph) -> IterateVector {
        let l = graph.laplacian();
        let mu = DVector::from_column_slice(&w.mu);
        let z = DVector::from_column_slice(&w.z);
        let p = DVector::from_column_slice(&w.p_g);
        let pd = DVector::from_vec(problem.demands());
        let mu_t = &mu + (-(l * &mu) + l * &z + &p - &pd) * ss.sigma_mu;
        let z_t = &z + (-(l * &mu_t) * 2.0 + l * &mu) * ss.sigma_z;
        let bx = problem.bounds();
        let pre: Vec<f64> = (0..w.n())
            .map(|i| w.p_g[i] - ss.sigma_g * (problem.grad(i, w.p_g[i]) + 2.0 * mu_t[i] - mu[i]))
            .collect();
        IterateVector { mu: mu_t.iter().copied().collect(), z: z_t.iter().copied().collect(), p_g: bx.project(&pre) }
    }

    #[test]
    fn benchmark_step_constants() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        assert!((ss.zeta - 0.0625).abs() < 1e-12);
        assert!(ss.kappa > 8.0);
        assert!((ss.kappa - 8.01).abs() < 1e-12);
        // Φ(σ)−κI has eigenvalues 1/σ − κ ± √(ℓ²+1), 1/σ − κ per Laplacian eigenvalue ℓ
        let expected_sigma_bound = 1.0 / (ss.kappa + 17f64.sqrt());
        assert!(ss.sigma_mu <= expected_sigma_bound + 1e-12);
        assert!(ss.sigma_mu >= expected_sigma_bound * SIGMA_GRID_RATIO);
        assert!(PhiMetric::from_steps(&g, &ss).min_eig_shifted(ss.kappa) >= -PSD_SLACK);
        // α = 2κζ/(4κζ−1) = 1.00125/1.0025
        assert!((ss.alpha - 1.00125 / 1.0025).abs() < 1e-12);
    }

    #[test]
    fn degenerate_graph_zeta() {
        let (p, g) = single(1.0, 0.5, 10.0);
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        assert_eq!(ss.zeta, 1.0);
        assert!(ss.kappa > 0.5);
    }

    #[test]
    fn single_agent_collapse() {
        let (p, g) = single(1.0, 0.5, 10.0);
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let w = IterateVector { mu: vec![-3.0], z: vec![7.0], p_g: vec![4.0] };
        let t = apply_t(&w, &ss, &p, &g);
        let mu_t = -3.0 + ss.sigma_mu * (4.0 - 10.0);
        let p_t = (4.0 - ss.sigma_g * (4.0 + 0.5 + 2.0 * mu_t + 3.0)).clamp(0.0, 100.0);
        assert_eq!(t.mu[0], mu_t);
        assert_eq!(t.z[0], 7.0);
        assert!((t.p_g[0] - p_t).abs() < 1e-14);
    }

    #[test]
    fn kernel_matches_dense_form() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w = random_iterate(&mut rng, &p);
            let a = apply_t(&w, &ss, &p, &g);
            let b = apply_t_dense(&w, &ss, &p, &g);
            assert!(a.max_abs_diff(&b) < 1e-10, "{}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn fixed_point_of_t_and_r() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let sol = solve_centralized(&p).unwrap();
        let ws = fixed_point(&p, &g, &sol.p_star, sol.mu_star);
        assert!(apply_t(&ws, &ss, &p, &g).max_abs_diff(&ws) < 1e-9);
        assert!(apply_r(&ws, &ss, &p, &g).max_abs_diff(&ws) < 1e-9);
        assert!(residual_eq11(&ws, &ws, &ss, &p, &g) < 1e-9);
    }

    #[test]
    fn residual_positive_off_fixed_point() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let w = IterateVector { mu: vec![-10.0; 6], z: vec![0.0; 6], p_g: vec![40.0; 6] };
        assert!(residual_eq11(&w, &w, &ss, &p, &g) > 1e-3);
        let t = apply_t(&w, &ss, &p, &g);
        assert!(residual_eq11(&w, &t, &ss, &p, &g) <= 1e-9 * (1.0 + w.to_dvector().norm()));
    }

    #[test]
    fn operator_report_passes_on_benchmark() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let sol = solve_centralized(&p).unwrap();
        let ws = fixed_point(&p, &g, &sol.p_star, sol.mu_star);
        let rep = check_operators(&p, &g, &ss, &ws, 200, 11, Execution::Sequential);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_recomposition < 1e-12 * 200.0);
    }

    #[test]
    fn bound_formulas() {
        // κζ → ½⁺: second factor → 1
        let z = 0.0625;
        let k = 0.5 / z + 1e-9;
        assert!((eta_max(0.0, 6, k, z) - 1.0).abs() < 1e-6);
        assert!((eta_max(0.0, 6, 1e9, z) - 2.0).abs() < 1e-6);
        let e1 = eta_max(1.0, 6, k, z);
        assert!((e1 - 1.0 / (1.0 + 2.0 / 6f64.sqrt())).abs() < 1e-6);
        assert!((e1 - 0.5505).abs() < 1e-3);
        assert!(eta_max(2.0, 6, k, z) < e1);
        assert!((chi_max(0.5, 6) - 6f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(chi_max(1.0 - 1e-12, 6) < 1e-11);
        assert_eq!(chi_max(0.3, 24), 2.0 * chi_max(0.3, 6));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, g) = benchmark::table1();
        assert!(matches!(StepSizes::choose(&p, &g, 0.0), Err(StepSizeError::BadMargin(_))));
        assert!(matches!(
            StepSizes::from_sigmas(&p, &g, 0.01, (1.0, 1.0, 1.0), 0.5),
            Err(StepSizeError::NotPositiveSemidefinite { .. })
        ));
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        assert!(ss.with_eta(1.0).is_err());
        assert!(ss.with_eta(0.0).is_err());
    }
}
