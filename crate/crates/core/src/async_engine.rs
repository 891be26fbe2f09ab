//! ASDPD: each agent wakes on its own clock, reads possibly stale values of
//! its one- and two-hop neighbours from their output caches, evaluates its
//! block of 𝒯, relaxes towards it and publishes.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{ActivationModel, DelayModel, DesError, Network, Scheduler, Version};
use crate::events::{sorted, PlugMode, ScenarioEvent};
use crate::oracle::{solve_centralized, DispatchSolution};
use crate::problem::{BoxSet, DispatchProblem};
use crate::splitting::{apply_t_in, block_update, BlockInputs, IterateVector, StepSizes};
use crate::sync_engine::p_error;
use crate::topology::CommGraph;
use crate::trace::{Trace, TraceMeta, TraceRow};

#[derive(Debug, Error)]
pub enum AsyncError {
    #[error(transparent)]
    Des(#[from] DesError),
    #[error("switching off agent {agent} disconnects the active communication graph")]
    GraphDisconnected { agent: usize },
    #[error("event refers to agent {0}, which does not exist")]
    UnknownAgent(usize),
    #[error("load steps are only supported by the real-time engine")]
    UnsupportedEvent,
    #[error("horizon reached after {activations} activations without convergence")]
    MaxItersExceeded { activations: u64, run: Box<AsyncRun> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncConfig {
    pub activation: ActivationModel,
    pub delay: DelayModel,
    /// Staleness bound in global iterations.
    pub chi: u64,
    #[serde(default)]
    pub seed: u64,
    /// Horizon in global iterations.
    #[serde(default = "default_max_activations")]
    pub max_activations: u64,
    /// Optional horizon in simulated seconds.
    #[serde(default)]
    pub horizon_s: Option<f64>,
    /// Displacement tolerance for termination.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub plug_mode: PlugMode,
}

fn default_max_activations() -> u64 {
    2_000_000
}

fn default_tol() -> f64 {
    1e-10
}

impl AsyncConfig {
    pub fn uniform(chi: u64, seed: u64) -> Self {
        Self {
            activation: ActivationModel::UniformRandom { rate_hz: 1.0 },
            delay: DelayModel::iterations(0, chi),
            chi,
            seed,
            max_activations: default_max_activations(),
            horizon_s: None,
            tol: default_tol(),
            plug_mode: PlugMode::Generator,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), DesError> {
        self.activation.validate(n)?;
        self.delay.validate(n)
    }
}

/// Value an agent publishes: μ, z and the local imbalance P^g − P^d. The
/// generation itself is kept for provenance and replay only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Published {
    pub mu: f64,
    pub z: f64,
    pub imbalance: f64,
    pub p_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LogEntry {
    /// Agent update at global index `k`; `reads` are (source, version).
    Activation { k: u64, t: f64, agent: usize, reads: Vec<(usize, u64)>, lo: f64, hi: f64 },
    /// Final write of an agent switched off in [`PlugMode::Agent`].
    PublishOff { k: u64, t: f64, agent: usize },
    Toggle { t: f64, agent: usize, on: bool },
}

/// Which convergence conditions a run satisfied.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub uniform_activation: bool,
    pub eta: f64,
    pub eta_bound: f64,
    pub eta_within_bound: bool,
    pub chi: u64,
    pub chi_max_for_eta: f64,
}

#[derive(Debug, Clone)]
pub struct AsyncRun {
    pub trace: Trace,
    pub final_w: IterateVector,
    pub activations: u64,
    pub sim_time: f64,
    pub converged: bool,
    pub max_staleness: u64,
    /// Oracle of the problem in force at the end of the run.
    pub reference: Option<DispatchSolution>,
    /// Global iterations until ‖P − P*‖_∞ stayed below `ERROR_TOL`.
    pub iterations_to_tol: Option<u64>,
    /// Simulated time of the activation that reached it.
    pub time_to_tol: Option<f64>,
    pub log: Vec<LogEntry>,
    pub histories: Vec<Vec<Version<Published>>>,
    pub assumptions: AssumptionReport,
}

pub const ERROR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct AsyncSummary {
    pub algorithm: &'static str,
    pub final_p_g: Vec<f64>,
    pub final_mu: Vec<f64>,
    pub iterations_to_tol: Option<u64>,
    pub max_observed_staleness: u64,
    pub seed: u64,
    pub converged: bool,
    pub activations: u64,
    pub sim_time_s: f64,
    pub oracle_error: Option<f64>,
    pub assumptions: AssumptionReport,
}

impl AsyncRun {
    pub fn oracle_error(&self) -> Option<f64> {
        self.reference.as_ref().map(|s| p_error(&self.final_w, s))
    }

    pub fn summary(&self, seed: u64) -> AsyncSummary {
        AsyncSummary {
            algorithm: "asdpd",
            final_p_g: self.final_w.p_g.clone(),
            final_mu: self.final_w.mu.clone(),
            iterations_to_tol: self.iterations_to_tol,
            max_observed_staleness: self.max_staleness,
            seed,
            converged: self.converged,
            activations: self.activations,
            sim_time_s: self.sim_time,
            oracle_error: self.oracle_error(),
            assumptions: self.assumptions.clone(),
        }
    }
}

struct StaleInputs<'a> {
    own: usize,
    w: &'a IterateVector,
    own_imbalance: f64,
    seen: &'a [Option<Published>],
}

impl BlockInputs for StaleInputs<'_> {
    fn mu(&self, j: usize) -> f64 {
        if j == self.own {
            self.w.mu[j]
        } else {
            self.seen[j].expect("read before use").mu
        }
    }
    fn z(&self, j: usize) -> f64 {
        if j == self.own {
            self.w.z[j]
        } else {
            self.seen[j].expect("read before use").z
        }
    }
    fn imbalance(&self, j: usize) -> f64 {
        if j == self.own {
            self.own_imbalance
        } else {
            self.seen[j].expect("read before use").imbalance
        }
    }
}

/// w⁺ = w + η·mask∘(𝒯(ŵ) − w).
#[allow(clippy::too_many_arguments)]
pub fn randomized_block_step(
    w: &IterateVector,
    w_hat: &IterateVector,
    mask: &[bool],
    ss: &StepSizes,
    problem: &DispatchProblem,
    graph: &CommGraph,
    bx: &BoxSet,
) -> IterateVector {
    let t = apply_t_in(w_hat, ss, problem, graph, bx);
    let mut out = w.clone();
    for (i, &on) in mask.iter().enumerate() {
        if on {
            out.mu[i] = w.mu[i] + ss.eta * (t.mu[i] - w.mu[i]);
            out.z[i] = w.z[i] + ss.eta * (t.z[i] - w.z[i]);
            out.p_g[i] = w.p_g[i] + ss.eta * (t.p_g[i] - w.p_g[i]);
        }
    }
    out
}

pub fn assumption_report(acfg: &AsyncConfig, ss: &StepSizes, n: usize) -> AssumptionReport {
    let eta_bound = ss.eta_bound(acfg.chi as f64, n);
    AssumptionReport {
        uniform_activation: acfg.activation.is_uniform(),
        eta: ss.eta,
        eta_bound,
        eta_within_bound: ss.eta < eta_bound,
        chi: acfg.chi,
        chi_max_for_eta: crate::splitting::chi_max(ss.eta, n),
    }
}

pub fn run_asdpd(
    problem: &DispatchProblem,
    graph: &CommGraph,
    ss: &StepSizes,
    acfg: &AsyncConfig,
    events: &[ScenarioEvent],
) -> Result<AsyncRun, AsyncError> {
    let n = problem.n();
    acfg.validate(n)?;
    let events = sorted(events);
    for ev in &events {
        if ev.agent_index() >= n {
            return Err(AsyncError::UnknownAgent(ev.agent_index() + 1));
        }
        if matches!(ev, ScenarioEvent::LoadStep { .. }) {
            return Err(AsyncError::UnsupportedEvent);
        }
    }

    let mut act_rng = ChaCha8Rng::seed_from_u64(acfg.seed);
    let mut delay_rng = ChaCha8Rng::seed_from_u64(acfg.seed);
    delay_rng.set_stream(1);
    let mut sched = Scheduler::new(&acfg.activation, n, &mut act_rng);

    let base_box = problem.bounds();
    let mut bx = base_box.clone();
    let mut active = vec![true; n];
    let mut w = IterateVector::initial(problem);
    let demand = problem.demands();
    let publish_value = |w: &IterateVector, i: usize| Published {
        mu: w.mu[i],
        z: w.z[i],
        imbalance: w.p_g[i] - demand[i],
        p_g: w.p_g[i],
    };
    let reach: Vec<Vec<usize>> = (0..n).map(|i| graph.reach(i)).collect();
    let mut net = Network::new(&reach, (0..n).map(|i| publish_value(&w, i)).collect(), acfg.delay.clone());

    let solve_for = |bx: &BoxSet| {
        let mut p = problem.clone();
        for i in 0..n {
            p = p.with_bounds(i, bx.lower[i], bx.upper[i]);
        }
        solve_centralized(&p).ok()
    };
    let mut reference = solve_for(&bx);

    let mut trace = Trace::new(TraceMeta::new("asdpd", acfg.seed));
    let mut log = Vec::new();
    let window = ((acfg.chi + 1) as usize) * n;
    let mut recent: VecDeque<(usize, f64)> = VecDeque::with_capacity(window + 1);
    let mut next_event = 0;
    let mut seen: Vec<Option<Published>> = vec![None; n];
    let mut last_above: Option<u64> = None;
    let mut k: u64 = 0;
    let mut t = 0.0;
    let mut converged = false;

    while k < acfg.max_activations {
        let (t_next, i) = sched.next_event(&mut act_rng);
        if acfg.horizon_s.is_some_and(|h| t_next > h) {
            break;
        }
        t = t_next;

        while next_event < events.len() && events[next_event].time() <= t {
            if let ScenarioEvent::Toggle { agent, on, t: te } = events[next_event] {
                let a = agent - 1;
                log.push(LogEntry::Toggle { t: te, agent: a, on });
                match acfg.plug_mode {
                    PlugMode::Generator => {
                        if on {
                            bx.lower[a] = base_box.lower[a];
                            bx.upper[a] = base_box.upper[a];
                        } else {
                            bx.lower[a] = 0.0;
                            bx.upper[a] = 0.0;
                            w.p_g[a] = 0.0;
                        }
                    }
                    PlugMode::Agent => {
                        if !on && active[a] {
                            let mut still = active.clone();
                            still[a] = false;
                            if !graph.is_connected_among(&still) {
                                return Err(AsyncError::GraphDisconnected { agent });
                            }
                            active[a] = false;
                            w.p_g[a] = 0.0;
                            net.publish(a, k, t, publish_value(&w, a), &mut delay_rng);
                            log.push(LogEntry::PublishOff { k, t, agent: a });
                            let mut row = TraceRow::new(k, a, w.mu[a], 0.0);
                            row.t_s = Some(t);
                            row.z = Some(w.z[a]);
                            trace.push(row);
                            k += 1;
                            recent.clear();
                        } else if on {
                            active[a] = true;
                        }
                        bx.lower[a] = if active[a] { base_box.lower[a] } else { 0.0 };
                        bx.upper[a] = if active[a] { base_box.upper[a] } else { 0.0 };
                    }
                }
                reference = solve_for(&bx);
                recent.clear();
            }
            next_event += 1;
        }
        if !active[i] {
            continue;
        }

        net.deliver(k, t);
        let mut reads = Vec::with_capacity(reach[i].len());
        for &j in &reach[i] {
            let (val, v, tau) = net.read(i, j, k);
            if tau > acfg.chi {
                return Err(DesError::StalenessViolation { reader: i + 1, writer: j + 1, k, tau, chi: acfg.chi }.into());
            }
            seen[j] = Some(*val);
            reads.push((j, v));
        }
        let inputs = StaleInputs { own: i, w: &w, own_imbalance: w.p_g[i] - demand[i], seen: &seen };
        let [mu_t, z_t, p_t] = block_update(i, &inputs, w.p_g[i], bx.lower[i], bx.upper[i], problem, graph, ss);
        let old = w.block(i);
        let new = [
            old[0] + ss.eta * (mu_t - old[0]),
            old[1] + ss.eta * (z_t - old[1]),
            old[2] + ss.eta * (p_t - old[2]),
        ];
        w.set_block(i, new);
        net.publish(i, k, t, publish_value(&w, i), &mut delay_rng);
        log.push(LogEntry::Activation { k, t, agent: i, reads, lo: bx.lower[i], hi: bx.upper[i] });

        let disp = (0..3).map(|c| (new[c] - old[c]).abs()).fold(0.0, f64::max);
        let err = reference.as_ref().map(|s| p_error(&w, s));
        if err.is_some_and(|e| e >= ERROR_TOL) {
            last_above = Some(k);
        }
        let mut row = TraceRow::new(k, i, new[0], new[2]);
        row.t_s = Some(t);
        row.z = Some(new[1]);
        row.err_oracle = err;
        row.residual = Some(disp);
        trace.push(row);
        k += 1;

        recent.push_back((i, disp));
        if recent.len() > window {
            recent.pop_front();
        }
        if recent.len() == window && next_event == events.len() {
            let all_seen = (0..n).filter(|&a| active[a]).all(|a| recent.iter().any(|&(b, _)| a == b));
            if all_seen && recent.iter().all(|&(_, d)| d < acfg.tol) {
                converged = true;
                break;
            }
        }
    }

    let final_err = reference.as_ref().map(|s| p_error(&w, s));
    let iterations_to_tol = final_err.filter(|e| *e < ERROR_TOL).map(|_| last_above.map_or(0, |k| k + 1));
    let time_to_tol = iterations_to_tol.and_then(|it| {
        if it == 0 {
            return Some(0.0);
        }
        log.iter().find_map(|e| match e {
            LogEntry::Activation { k, t, .. } | LogEntry::PublishOff { k, t, .. } if *k == it - 1 => Some(*t),
            _ => None,
        })
    });
    let run = AsyncRun {
        trace,
        final_w: w,
        activations: k,
        sim_time: t,
        converged,
        max_staleness: net.max_staleness(),
        reference,
        iterations_to_tol,
        time_to_tol,
        log,
        histories: net.into_histories(),
        assumptions: assumption_report(acfg, ss, n),
    };
    if !converged {
        return Err(AsyncError::MaxItersExceeded { activations: k, run: Box::new(run) });
    }
    Ok(run)
}

/// Re-executes a run from its log through [`randomized_block_step`] and
/// returns the iterate after every activation, in log order.
pub fn replay(
    problem: &DispatchProblem,
    graph: &CommGraph,
    ss: &StepSizes,
    log: &[LogEntry],
    histories: &[Vec<Version<Published>>],
) -> Vec<(u64, usize, IterateVector)> {
    let n = problem.n();
    let mut w = IterateVector::initial(problem);
    let mut bx = problem.bounds();
    let base = problem.bounds();
    let mut out = Vec::new();
    for entry in log {
        match entry {
            LogEntry::Activation { k, agent, reads, lo, hi, .. } => {
                let mut w_hat = w.clone();
                for &(j, v) in reads {
                    let val = histories[j][v as usize].value;
                    w_hat.mu[j] = val.mu;
                    w_hat.z[j] = val.z;
                    w_hat.p_g[j] = val.p_g;
                }
                bx.lower[*agent] = *lo;
                bx.upper[*agent] = *hi;
                let mask: Vec<bool> = (0..n).map(|j| j == *agent).collect();
                w = randomized_block_step(&w, &w_hat, &mask, ss, problem, graph, &bx);
                out.push((*k, *agent, w.clone()));
            }
            LogEntry::PublishOff { k, agent, .. } => {
                w.p_g[*agent] = 0.0;
                out.push((*k, *agent, w.clone()));
            }
            LogEntry::Toggle { agent, on, .. } => {
                if !on {
                    w.p_g[*agent] = 0.0;
                } else {
                    bx.lower[*agent] = base.lower[*agent];
                    bx.upper[*agent] = base.upper[*agent];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::des::DelayUnit;
    use crate::oracle::solve_centralized;
    use crate::splitting::fixed_point;
    use crate::sync_engine::{run_sdpd, SyncOptions};

    fn bench() -> (DispatchProblem, CommGraph, StepSizes) {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        (p, g, ss)
    }

    #[test]
    fn delay_free_rounds_reproduce_sdpd() {
        let (p, g, ss) = bench();
        let acfg = AsyncConfig {
            activation: ActivationModel::SynchronousRounds { period_s: 1.0 },
            delay: DelayModel::zero(DelayUnit::Seconds),
            chi: 5,
            max_activations: 600,
            ..AsyncConfig::uniform(0, 0)
        };
        let run = match run_asdpd(&p, &g, &ss, &acfg, &[]) {
            Err(AsyncError::MaxItersExceeded { run, .. }) => run,
            other => panic!("{other:?}"),
        };
        let sync = match run_sdpd(&p, &g, &ss, &SyncOptions { max_iters: 100, ..Default::default() }) {
            Err(crate::sync_engine::SyncError::MaxItersExceeded { run, .. }) => run,
            other => panic!("{other:?}"),
        };
        // sync rows start with k = 0 (initial state)
        for (a, s) in run.trace.rows.iter().zip(sync.trace.rows.iter().skip(6)) {
            assert_eq!(a.agent, s.agent);
            assert_eq!(a.mu.to_bits(), s.mu.to_bits());
            assert_eq!(a.z.unwrap().to_bits(), s.z.unwrap().to_bits());
            assert_eq!(a.p_g.to_bits(), s.p_g.to_bits());
        }
        assert_eq!(run.final_w, sync.final_w);
    }

    #[test]
    fn seeded_runs_are_identical_and_replayable() {
        let (p, g, ss) = bench();
        let ss = ss.with_eta(0.9 * ss.eta_bound(1.0, 6)).unwrap();
        let acfg = AsyncConfig {
            activation: ActivationModel::PerAgentRates { rates_hz: vec![10., 12., 14., 16., 18., 20.] },
            ..AsyncConfig::uniform(1, 42)
        };
        let a = run_asdpd(&p, &g, &ss, &acfg, &[]).unwrap();
        let b = run_asdpd(&p, &g, &ss, &acfg, &[]).unwrap();
        assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
        assert!(a.max_staleness <= 1);
        assert!(a.oracle_error().unwrap() < 1e-4);

        let replayed = replay(&p, &g, &ss, &a.log, &a.histories);
        assert_eq!(replayed.len(), a.trace.len());
        for ((k, agent, w), row) in replayed.iter().zip(&a.trace.rows) {
            assert_eq!(*k, row.k_global);
            assert_eq!(Some(*agent), row.agent);
            assert_eq!(w.mu[*agent].to_bits(), row.mu.to_bits());
            assert_eq!(w.z[*agent].to_bits(), row.z.unwrap().to_bits());
            assert_eq!(w.p_g[*agent].to_bits(), row.p_g.to_bits());
        }
        // causality: every read names an earlier write
        for e in &a.log {
            if let LogEntry::Activation { k, reads, .. } = e {
                for &(j, v) in reads {
                    assert!(a.histories[j][v as usize].g < *k as i64);
                }
            }
        }
    }

    #[test]
    fn staleness_violation_is_reported() {
        let (p, g, ss) = bench();
        let acfg = AsyncConfig { delay: DelayModel::iterations(3, 3), ..AsyncConfig::uniform(1, 1) };
        assert!(matches!(
            run_asdpd(&p, &g, &ss, &acfg, &[]),
            Err(AsyncError::Des(DesError::StalenessViolation { .. }))
        ));
    }

    #[test]
    fn block_step_special_cases() {
        let (p, g, ss) = bench();
        let bx = p.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = crate::splitting::random_iterate(&mut rng, &p);
        let full = randomized_block_step(&w, &w, &[true; 6], &ss, &p, &g, &bx);
        assert_eq!(full, crate::sync_engine::km_step(&w, &ss, &p, &g));
        assert_eq!(randomized_block_step(&w, &w, &[false; 6], &ss, &p, &g, &bx), w);

        let sol = solve_centralized(&p).unwrap();
        let ws = fixed_point(&p, &g, &sol.p_star, sol.mu_star);
        let mut mask = [false; 6];
        mask[2] = true;
        let out = randomized_block_step(&w, &ws, &mask, &ss, &p, &g, &bx);
        for c in 0..3 {
            let expect = w.block(2)[c] + ss.eta * (ws.block(2)[c] - w.block(2)[c]);
            assert!((out.block(2)[c] - expect).abs() < 1e-9);
        }
        for j in [0, 1, 3, 4, 5] {
            assert_eq!(out.block(j), w.block(j));
        }
    }

    #[test]
    fn two_agent_toggle_off_other_serves_all() {
        use crate::problem::{AgentSpec, BusKind};
        let ag = |d| AgentSpec { a: 1.0, b: 0.1, p_min: 0.0, p_max: 100.0, p_d: d, kind: BusKind::Ac };
        let p = DispatchProblem::new(vec![ag(30.0), ag(0.0)]).unwrap();
        let g = CommGraph::build(2, &[(1, 2)]).unwrap();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let ev = [ScenarioEvent::Toggle { t: 0.0, agent: 2, on: false }];
        let run = run_asdpd(&p, &g, &ss, &AsyncConfig::uniform(0, 3), &ev).unwrap();
        assert!((run.final_w.p_g[0] - 30.0).abs() < 1e-6);
        assert_eq!(run.final_w.p_g[1], 0.0);
    }

    #[test]
    fn agent_mode_refuses_disconnection() {
        let (p, _, _) = bench();
        let path = CommGraph::build(6, &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]).unwrap();
        let ss = StepSizes::choose(&p, &path, 0.01).unwrap();
        let acfg = AsyncConfig { plug_mode: PlugMode::Agent, max_activations: 1000, ..AsyncConfig::uniform(0, 2) };
        let ev = [ScenarioEvent::Toggle { t: 1.0, agent: 3, on: false }];
        assert!(matches!(run_asdpd(&p, &path, &ss, &acfg, &ev), Err(AsyncError::GraphDisconnected { agent: 3 })));
    }

    #[test]
    fn generator_toggle_recovers() {
        let (p, g, ss) = bench();
        let ss = ss.with_eta(0.5).unwrap();
        let ev = [
            ScenarioEvent::Toggle { t: 50.0, agent: 4, on: false },
            ScenarioEvent::Toggle { t: 100.0, agent: 4, on: true },
        ];
        let run = run_asdpd(&p, &g, &ss, &AsyncConfig::uniform(0, 8), &ev).unwrap();
        let sol = solve_centralized(&p).unwrap();
        assert!(p_error(&run.final_w, &sol) < 1e-6);
        let replayed = replay(&p, &g, &ss, &run.log, &run.histories);
        assert_eq!(replayed.last().unwrap().2, run.final_w);
    }
}
