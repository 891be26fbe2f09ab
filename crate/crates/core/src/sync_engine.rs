//! SDPD: the synchronous relaxed iteration w_{k+1} = w_k + η(𝒯(w_k) − w_k).

use serde::Serialize;
use thiserror::Error;

use crate::oracle::{solve_centralized, DispatchSolution};
use crate::problem::DispatchProblem;
use crate::splitting::{apply_t, fixed_point, IterateVector, PhiMetric, StepSizes};
use crate::topology::CommGraph;
use crate::trace::{Trace, TraceMeta, TraceRow};

const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("no convergence after {iterations} iterations (last step {last_step:e})")]
    MaxItersExceeded { iterations: usize, last_step: f64, run: Box<SyncRun> },
    #[error("iterate diverged at iteration {iteration} (|w|∞ = {norm:e})")]
    Diverged { iteration: usize, norm: f64, run: Box<SyncRun> },
}

#[derive(Debug, Clone)]
pub struct SyncOptions {
    pub max_iters: usize,
    /// Stop once ‖w_{k+1} − w_k‖_∞ < tol.
    pub tol: f64,
    /// Keep every `record_every`-th iteration in the trace (the last one is
    /// always kept).
    pub record_every: usize,
    pub w0: Option<IterateVector>,
    /// Record ‖w_k − w*‖_Φ for every k (needs a feasible problem).
    pub track_phi_distance: bool,
    pub seed: u64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self { max_iters: 100_000, tol: 1e-10, record_every: 1, w0: None, track_phi_distance: false, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyncRun {
    pub trace: Trace,
    pub final_w: IterateVector,
    pub iterations: usize,
    pub converged: bool,
    pub last_step: f64,
    pub reference: Option<DispatchSolution>,
    /// ‖w_k − w*‖_Φ for k = 0..=iterations when tracked.
    pub phi_distance: Vec<f64>,
    /// First iteration after which ‖P − P*‖_∞ stays below each entry of
    /// [`ERROR_LEVELS`].
    pub iterations_to: Vec<Option<usize>>,
}

pub const ERROR_LEVELS: [f64; 3] = [1e-4, 1e-6, 1e-8];

#[derive(Debug, Clone, Serialize)]
pub struct SyncSummary {
    pub algorithm: &'static str,
    pub converged: bool,
    pub iterations: usize,
    pub last_step: f64,
    pub final_p_g: Vec<f64>,
    pub final_mu: Vec<f64>,
    pub mu_spread: f64,
    pub oracle_error: Option<f64>,
    pub eta: f64,
    pub seed: u64,
}

impl SyncRun {
    pub fn oracle_error(&self) -> Option<f64> {
        self.reference.as_ref().map(|s| p_error(&self.final_w, s))
    }

    pub fn summary(&self, ss: &StepSizes, seed: u64) -> SyncSummary {
        SyncSummary {
            algorithm: "sdpd",
            converged: self.converged,
            iterations: self.iterations,
            last_step: self.last_step,
            final_p_g: self.final_w.p_g.clone(),
            final_mu: self.final_w.mu.clone(),
            mu_spread: self.final_w.mu_spread(),
            oracle_error: self.oracle_error(),
            eta: ss.eta,
            seed,
        }
    }
}

pub(crate) fn p_error(w: &IterateVector, sol: &DispatchSolution) -> f64 {
    w.p_g.iter().zip(&sol.p_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// One relaxed step.
pub fn km_step(w: &IterateVector, ss: &StepSizes, problem: &DispatchProblem, graph: &CommGraph) -> IterateVector {
    let t = apply_t(w, ss, problem, graph);
    let eta = ss.eta;
    let relax = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, tx)| x + eta * (tx - x)).collect();
    IterateVector { mu: relax(&w.mu, &t.mu), z: relax(&w.z, &t.z), p_g: relax(&w.p_g, &t.p_g) }
}

/// Infinite stream of SDPD iterates starting after `w0`.
pub struct SdpdSteps<'a> {
    w: IterateVector,
    ss: &'a StepSizes,
    problem: &'a DispatchProblem,
    graph: &'a CommGraph,
}

impl Iterator for SdpdSteps<'_> {
    type Item = IterateVector;
    fn next(&mut self) -> Option<IterateVector> {
        self.w = km_step(&self.w, self.ss, self.problem, self.graph);
        Some(self.w.clone())
    }
}

pub fn sdpd_steps<'a>(
    w0: IterateVector,
    ss: &'a StepSizes,
    problem: &'a DispatchProblem,
    graph: &'a CommGraph,
) -> SdpdSteps<'a> {
    SdpdSteps { w: w0, ss, problem, graph }
}

fn record(trace: &mut Trace, k: u64, w: &IterateVector, err: Option<f64>, step: f64) {
    for i in 0..w.n() {
        let mut row = TraceRow::new(k, i, w.mu[i], w.p_g[i]);
        row.z = Some(w.z[i]);
        row.err_oracle = err;
        row.residual = Some(step);
        trace.push(row);
    }
}

pub fn run_sdpd(
    problem: &DispatchProblem,
    graph: &CommGraph,
    ss: &StepSizes,
    opts: &SyncOptions,
) -> Result<SyncRun, SyncError> {
    let reference = solve_centralized(problem).ok();
    let phi = opts.track_phi_distance.then(|| PhiMetric::from_steps(graph, ss));
    let w_star = reference.as_ref().map(|s| fixed_point(problem, graph, &s.p_star, s.mu_star));

    let mut w = opts.w0.clone().unwrap_or_else(|| IterateVector::initial(problem));
    let mut trace = Trace::new(TraceMeta::new("sdpd", opts.seed));
    let err = |w: &IterateVector| reference.as_ref().map(|s| p_error(w, s));
    let every = opts.record_every.max(1);

    record(&mut trace, 0, &w, err(&w), 0.0);
    let mut phi_distance = Vec::new();
    let push_phi = |w: &IterateVector, out: &mut Vec<f64>| {
        if let (Some(phi), Some(ws)) = (&phi, &w_star) {
            out.push(phi.dist(w, ws));
        }
    };
    push_phi(&w, &mut phi_distance);

    let mut last_above = vec![None::<usize>; ERROR_LEVELS.len()];
    let mut track_levels = |k: usize, e: Option<f64>| {
        if let Some(e) = e {
            for (slot, lvl) in last_above.iter_mut().zip(ERROR_LEVELS) {
                if e >= lvl {
                    *slot = Some(k);
                }
            }
        }
    };
    track_levels(0, err(&w));

    let mut last_step = f64::INFINITY;
    let mut converged = false;
    let mut k = 0;
    let mut diverged = None;
    for next in sdpd_steps(w.clone(), ss, problem, graph).take(opts.max_iters) {
        k += 1;
        last_step = next.max_abs_diff(&w);
        w = next;
        let e = err(&w);
        track_levels(k, e);
        push_phi(&w, &mut phi_distance);
        converged = last_step < opts.tol;
        let norm = w.to_dvector().amax();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            diverged = Some(norm);
        }
        if converged || diverged.is_some() || k == opts.max_iters || k % every == 0 {
            record(&mut trace, k as u64, &w, e, last_step);
        }
        if converged || diverged.is_some() {
            break;
        }
    }

    let final_err = err(&w);
    let iterations_to = last_above
        .iter()
        .zip(ERROR_LEVELS)
        .map(|(slot, lvl)| final_err.filter(|e| *e < lvl).map(|_| slot.map_or(0, |k| k + 1)))
        .collect();
    let run = SyncRun { trace, final_w: w, iterations: k, converged, last_step, reference, phi_distance, iterations_to };
    if let Some(norm) = diverged {
        return Err(SyncError::Diverged { iteration: k, norm, run: Box::new(run) });
    }
    if !converged {
        return Err(SyncError::MaxItersExceeded { iterations: k, last_step, run: Box::new(run) });
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::problem::{AgentSpec, BusKind};

    #[test]
    fn symmetric_pair_converges() {
        let ag = |d| AgentSpec { a: 1.0, b: 0.0, p_min: 0.0, p_max: 100.0, p_d: d, kind: BusKind::Ac };
        let p = DispatchProblem::new(vec![ag(20.0), ag(30.0)]).unwrap();
        let g = CommGraph::build(2, &[(1, 2)]).unwrap();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let run = run_sdpd(&p, &g, &ss, &SyncOptions::default()).unwrap();
        assert!((run.final_w.p_g[0] - 25.0).abs() < 1e-7);
        assert!((run.final_w.p_g[1] - 25.0).abs() < 1e-7);
        assert!(run.final_w.mu_spread() < 1e-7);
    }

    #[test]
    fn benchmark_converges_to_oracle() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let opts = SyncOptions { record_every: 100, track_phi_distance: true, ..Default::default() };
        let run = run_sdpd(&p, &g, &ss, &opts).unwrap();
        assert!(run.oracle_error().unwrap() < 1e-6);
        assert!(run.final_w.mu_spread() < 1e-6);
        for pair in run.phi_distance.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
        for k in run.final_w.p_g.iter().zip(p.agents()) {
            assert!(*k.0 >= k.1.p_min && *k.0 <= k.1.p_max);
        }
        let imbalance: f64 = run.final_w.p_g.iter().sum::<f64>() - p.total_demand();
        assert!(imbalance.abs() <= 10.0 * opts.tol * 6.0 + 1e-9);
    }

    #[test]
    fn oversized_relaxation_reports_failure() {
        let (p, g) = benchmark::table1();
        let mut ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        ss.eta = 3.0 * ss.eta_bound(0.0, 6);
        let opts = SyncOptions { max_iters: 5000, record_every: 1000, ..Default::default() };
        assert!(run_sdpd(&p, &g, &ss, &opts).is_err());
    }

    #[test]
    fn stepper_matches_run() {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let w10 = sdpd_steps(IterateVector::initial(&p), &ss, &p, &g).nth(9).unwrap();
        let opts = SyncOptions { max_iters: 10, ..Default::default() };
        let run = match run_sdpd(&p, &g, &ss, &opts) {
            Err(SyncError::MaxItersExceeded { run, .. }) => run,
            other => panic!("{other:?}"),
        };
        assert_eq!(run.final_w, w10);
        assert_eq!(run.trace.len(), 6 * 11);
    }
}
