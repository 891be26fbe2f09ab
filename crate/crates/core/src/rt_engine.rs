//! RTASDPD: the asynchronous controller closed around the plant surrogate.
//!
//! The z variables are gone. Each agent measures its own bus and uses
//! M ω̇ + D ω (AC) or v C v̇ (DC) as the balance term, so only μ travels over
//! the network and only between direct neighbours. Setpoints go to the plant
//! through the actuator lag.
//!
//! Activations are quantized to the plant grid: every activation due at or
//! before t_m = m·dt runs on the state at t_m, then the plant advances one
//! step with the resulting setpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::async_engine::{assumption_report, AssumptionReport, AsyncConfig};
use crate::des::{DesError, Network, Scheduler};
use crate::events::{sorted, PlugMode, ScenarioEvent};
use crate::oracle::{solve_centralized, DispatchSolution};
use crate::plant::{equilibrium, line_losses, measure, sampled_value, step_plant, Estimator, PlantError, PlantParams, PlantState};
use crate::problem::{BusKind, DispatchProblem};
use crate::splitting::{spread, StepSizes};
use crate::topology::CommGraph;
use crate::trace::{Trace, TraceMeta, TraceRow};

#[derive(Debug, Error)]
pub enum RtError {
    #[error(transparent)]
    Des(#[from] DesError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("plant has {plant} buses but the problem has {problem} agents")]
    SizeMismatch { plant: usize, problem: usize },
    #[error("bus {0} kind differs between plant and problem")]
    KindMismatch(usize),
    #[error("event refers to agent {0}, which does not exist")]
    UnknownAgent(usize),
    #[error("switching off agent {agent} disconnects the active communication graph")]
    GraphDisconnected { agent: usize },
    #[error("horizon must be positive")]
    MaxHorizon,
    #[error("not at equilibrium: {failed:?}")]
    NotConverged { failed: Vec<String>, report: Box<RtEquilibriumReport> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtInit {
    /// Controller at the oracle of the initial problem, plant synchronized.
    #[default]
    Oracle,
    /// μ = 0, P^g = p_min, plant synchronized for that dispatch.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtOptions {
    pub horizon_s: f64,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub init: RtInit,
    /// Plant samples are kept every this many steps.
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    /// Length of the trailing window used by the equilibrium checks.
    #[serde(default = "default_window")]
    pub settle_window_s: f64,
}

fn default_sample_every() -> usize {
    10
}

fn default_window() -> f64 {
    0.5
}

impl RtOptions {
    pub fn new(horizon_s: f64) -> Self {
        Self {
            horizon_s,
            estimator: Estimator::BackwardDifference,
            init: RtInit::Oracle,
            sample_every: default_sample_every(),
            settle_window_s: default_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantSample {
    pub t: f64,
    pub omega: Vec<f64>,
    pub v: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub p_set: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Snapshot at the end of a stage (just before an event, or at the horizon).
#[derive(Debug, Clone, Serialize)]
pub struct StageEnd {
    pub t: f64,
    pub p_set: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub mu: Vec<f64>,
    pub total_demand: f64,
    pub losses: f64,
    /// max |ω| over the trailing window.
    pub max_abs_omega: f64,
    /// Oracle of the (lossless) problem in force during the stage.
    pub oracle: Option<DispatchSolution>,
    pub oracle_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RtRun {
    pub trace: Trace,
    pub plant: PlantState,
    pub mu: Vec<f64>,
    pub p_set: Vec<f64>,
    /// Problem in force at the horizon (demands and boxes after all events).
    pub final_problem: DispatchProblem,
    pub stages: Vec<StageEnd>,
    pub samples: Vec<PlantSample>,
    pub activations: u64,
    pub max_staleness: u64,
    pub assumptions: AssumptionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RtSummary {
    pub algorithm: &'static str,
    pub seed: u64,
    pub activations: u64,
    pub max_observed_staleness: u64,
    pub final_p_g: Vec<f64>,
    pub final_mu: Vec<f64>,
    pub stages: Vec<StageEnd>,
    pub assumptions: AssumptionReport,
}

impl RtRun {
    pub fn summary(&self, seed: u64) -> RtSummary {
        RtSummary {
            algorithm: "rtasdpd",
            seed,
            activations: self.activations,
            max_observed_staleness: self.max_staleness,
            final_p_g: self.p_set.clone(),
            final_mu: self.mu.clone(),
            stages: self.stages.clone(),
            assumptions: self.assumptions.clone(),
        }
    }
}

struct Agent {
    mu: f64,
    p: f64,
    last_sample: (f64, f64),
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
pub fn run_rtasdpd(
    problem: &DispatchProblem,
    graph: &CommGraph,
    plant: &PlantParams,
    ss: &StepSizes,
    acfg: &AsyncConfig,
    opts: &RtOptions,
    events: &[ScenarioEvent],
) -> Result<RtRun, RtError> {
    let n = problem.n();
    plant.validate()?;
    acfg.validate(n)?;
    if plant.n() != n {
        return Err(RtError::SizeMismatch { plant: plant.n(), problem: n });
    }
    if let Some(i) = (0..n).find(|&i| plant.kinds[i] != problem.kind(i)) {
        return Err(RtError::KindMismatch(i + 1));
    }
    if !(opts.horizon_s > 0.0) {
        return Err(RtError::MaxHorizon);
    }
    let events = sorted(events);
    if let Some(ev) = events.iter().find(|e| e.agent_index() >= n) {
        return Err(RtError::UnknownAgent(ev.agent_index() + 1));
    }

    let mut act_rng = ChaCha8Rng::seed_from_u64(acfg.seed);
    let mut delay_rng = ChaCha8Rng::seed_from_u64(acfg.seed);
    delay_rng.set_stream(1);
    let mut sched = Scheduler::new(&acfg.activation, n, &mut act_rng);

    let mut current = problem.clone();
    let base_box = problem.bounds();
    let mut active = vec![true; n];
    let (mu0, p0) = match (opts.init, solve_centralized(problem)) {
        (RtInit::Oracle, Ok(sol)) => (vec![sol.mu_star; n], sol.p_star),
        _ => (vec![0.0; n], base_box.lower.clone()),
    };
    let mut state = equilibrium(plant, &p0, &problem.demands());
    let mut agents: Vec<Agent> = (0..n)
        .map(|i| Agent { mu: mu0[i], p: p0[i], last_sample: (0.0, sampled_value(&state, plant, i)) })
        .collect();
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| graph.one_hop(i).to_vec()).collect();
    let mut net = Network::new(&neighbours, mu0.clone(), acfg.delay.clone());

    let oracle_of = |p: &DispatchProblem| solve_centralized(p).ok();
    let mut reference = oracle_of(&current);

    let mut trace = Trace::new(TraceMeta::new("rtasdpd", acfg.seed));
    trace.extra_columns = plant.lines.iter().map(|l| format!("p_flow_{}_{}", l.a + 1, l.b + 1)).collect();
    let mut samples: Vec<PlantSample> = Vec::new();
    let mut stages = Vec::new();

    let dt = plant.dt;
    let steps = (opts.horizon_s / dt).round() as u64;
    let window_samples = ((opts.settle_window_s / (dt * opts.sample_every as f64)).round() as usize).max(1);
    let mut pending = sched.next_event(&mut act_rng);
    let mut next_event = 0;
    let mut k: u64 = 0;

    let sample = |t: f64, st: &PlantState, agents: &[Agent]| PlantSample {
        t,
        omega: st.omega.clone(),
        v: st.v.clone(),
        p_inj: st.p_inj.clone(),
        p_set: agents.iter().map(|a| a.p).collect(),
        mu: agents.iter().map(|a| a.mu).collect(),
    };
    let stage_end = |t: f64, st: &PlantState, agents: &[Agent], samples: &[PlantSample], cur: &DispatchProblem, reference: &Option<DispatchSolution>| {
        let p_set: Vec<f64> = agents.iter().map(|a| a.p).collect();
        let tail = &samples[samples.len().saturating_sub(window_samples)..];
        let max_abs_omega = tail
            .iter()
            .flat_map(|s| s.omega.iter())
            .chain(st.omega.iter())
            .fold(0.0_f64, |m, w| m.max(w.abs()));
        StageEnd {
            t,
            oracle_error: reference.as_ref().map(|s| max_err(&p_set, &s.p_star)),
            p_set,
            p_inj: st.p_inj.clone(),
            mu: agents.iter().map(|a| a.mu).collect(),
            total_demand: cur.total_demand(),
            losses: line_losses(st, plant),
            max_abs_omega,
            oracle: reference.clone(),
        }
    };

    for m in 0..=steps {
        let t = m as f64 * dt;

        while next_event < events.len() && events[next_event].time() <= t {
            stages.push(stage_end(t, &state, &agents, &samples, &current, &reference));
            match events[next_event] {
                ScenarioEvent::LoadStep { agent, delta_kw, .. } => {
                    current = current.with_demand_step(agent - 1, delta_kw);
                }
                ScenarioEvent::Toggle { agent, on, .. } => {
                    let a = agent - 1;
                    if acfg.plug_mode == PlugMode::Agent && !on {
                        let mut still = active.clone();
                        still[a] = false;
                        if !graph.is_connected_among(&still) {
                            return Err(RtError::GraphDisconnected { agent });
                        }
                        active[a] = false;
                    } else if on {
                        active[a] = true;
                    }
                    let (lo, hi) = if on { (base_box.lower[a], base_box.upper[a]) } else { (0.0, 0.0) };
                    current = current.with_bounds(a, lo, hi);
                    if !on {
                        agents[a].p = 0.0;
                        state.p_inj[a] = 0.0;
                    }
                }
            }
            reference = oracle_of(&current);
            next_event += 1;
        }

        let p_d = current.demands();
        let bx = current.bounds();
        while pending.0 <= t {
            let i = pending.1;
            pending = sched.next_event(&mut act_rng);
            if !active[i] {
                continue;
            }
            net.deliver(k, t);
            let mut lap = 0.0;
            for &j in &neighbours[i] {
                let (mu_j, _, tau) = net.read(i, j, k);
                if tau > acfg.chi {
                    return Err(DesError::StalenessViolation { reader: i + 1, writer: j + 1, k, tau, chi: acfg.chi }.into());
                }
                lap += agents[i].mu - *mu_j;
            }
            let p_set: Vec<f64> = agents.iter().map(|a| a.p).collect();
            let meas = measure(&state, plant, i, &p_set, &p_d, opts.estimator, Some(agents[i].last_sample));
            agents[i].last_sample = (t, sampled_value(&state, plant, i));

            let ag = &agents[i];
            let mu_t = ag.mu + ss.sigma_mu * (-lap + meas.balance);
            let p_t = (ag.p - ss.sigma_g * (current.grad(i, ag.p) + 2.0 * mu_t - ag.mu)).clamp(bx.lower[i], bx.upper[i]);
            let mu_new = ag.mu + ss.eta * (mu_t - ag.mu);
            let p_new = ag.p + ss.eta * (p_t - ag.p);
            let disp = (mu_new - ag.mu).abs().max((p_new - ag.p).abs());
            agents[i].mu = mu_new;
            agents[i].p = p_new;
            net.publish(i, k, t, mu_new, &mut delay_rng);

            let mut row = TraceRow::new(k, i, mu_new, p_new);
            row.t_s = Some(t);
            match plant.kinds[i] {
                BusKind::Ac => row.omega = Some(state.omega[i]),
                BusKind::Dc => row.v = Some(state.v[i]),
            }
            let p_now: Vec<f64> = agents.iter().map(|a| a.p).collect();
            row.err_oracle = reference.as_ref().map(|s| max_err(&p_now, &s.p_star));
            row.residual = Some(disp);
            row.extra = state.p_flow.clone();
            if row.extra.is_empty() {
                row.extra = plant.lines.iter().map(|_| 0.0).collect();
            }
            trace.push(row);
            k += 1;
        }

        if m % opts.sample_every as u64 == 0 {
            samples.push(sample(t, &state, &agents));
        }
        if m == steps {
            stages.push(stage_end(t, &state, &agents, &samples, &current, &reference));
            break;
        }
        let p_set: Vec<f64> = agents.iter().map(|a| a.p).collect();
        state = step_plant(&state, plant, &p_set, &p_d)?;
        state.t = (m + 1) as f64 * dt;
    }

    Ok(RtRun {
        trace,
        mu: agents.iter().map(|a| a.mu).collect(),
        p_set: agents.iter().map(|a| a.p).collect(),
        plant: state,
        final_problem: current,
        stages,
        samples,
        activations: k,
        max_staleness: net.max_staleness(),
        assumptions: assumption_report(acfg, ss, n),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RtEquilibriumReport {
    pub max_abs_omega: f64,
    pub mu_spread: f64,
    /// Spread of the marginal costs −μ_i relative to their mean.
    pub mu_spread_relative: f64,
    /// max_i |P_i − proj(P_i − σ_g(f_i'(P_i) + μ_i))|.
    pub projection_residual: f64,
    pub tol: f64,
}

/// ω ≈ 0, μ-consensus and the projection fixed point over the trailing
/// window of a finished run.
pub fn check_rt_equilibrium(run: &RtRun, ss: &StepSizes, tol: f64) -> Result<RtEquilibriumReport, RtError> {
    let max_abs_omega = run.stages.last().map_or(f64::INFINITY, |s| s.max_abs_omega);
    let mu_spread = spread(&run.mu);
    let mean_mc = -run.mu.iter().sum::<f64>() / run.mu.len() as f64;
    let mu_spread_relative = if mean_mc != 0.0 { mu_spread / mean_mc.abs() } else { mu_spread };
    let bx = run.final_problem.bounds();
    let projection_residual = (0..run.mu.len())
        .map(|i| {
            let p = run.p_set[i];
            let target = bx.clip(i, p - ss.sigma_g * (run.final_problem.grad(i, p) + run.mu[i]));
            (p - target).abs()
        })
        .fold(0.0, f64::max);
    let report = RtEquilibriumReport { max_abs_omega, mu_spread, mu_spread_relative, projection_residual, tol };
    let mut failed = Vec::new();
    if max_abs_omega >= tol * 2.0 * std::f64::consts::PI {
        failed.push("omega".to_string());
    }
    if mu_spread >= tol {
        failed.push("mu_consensus".to_string());
    }
    if projection_residual >= tol {
        failed.push("projection".to_string());
    }
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(RtError::NotConverged { failed, report: Box::new(report) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::des::{ActivationModel, DelayModel, DelayUnit};

    fn fast_config(seed: u64) -> AsyncConfig {
        let mut acfg = AsyncConfig::uniform(1_000_000, seed);
        acfg.activation = ActivationModel::PerAgentRates { rates_hz: vec![200.0, 240.0, 280.0, 320.0, 360.0, 400.0] };
        acfg.delay = DelayModel { unit: DelayUnit::Seconds, min: 0.0, max: 0.002, channels: vec![] };
        acfg
    }

    fn setup() -> (DispatchProblem, CommGraph, StepSizes) {
        let p = benchmark::problem_with_demand(&benchmark::BASE_DEMAND);
        let g = benchmark::ring();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap().with_eta(0.9).unwrap();
        (p, g, ss)
    }

    #[test]
    fn load_step_settles_at_new_optimum() {
        let (p, g, ss) = setup();
        let ev = [ScenarioEvent::LoadStep { t: 0.5, agent: 2, delta_kw: 60.0 }];
        let run = run_rtasdpd(&p, &g, &benchmark::plant(0.0), &ss, &fast_config(3), &RtOptions::new(6.5), &ev).unwrap();
        let end = run.stages.last().unwrap();
        assert!(end.oracle_error.unwrap() < 1e-3, "{:?}", end.oracle_error);
        assert!((end.total_demand - 460.29).abs() < 1e-9);
        check_rt_equilibrium(&run, &ss, 1e-3).unwrap();
    }

    #[test]
    fn undisturbed_oracle_start_stays_put() {
        let (p, g, ss) = setup();
        let run = run_rtasdpd(&p, &g, &benchmark::plant(0.0), &ss, &fast_config(1), &RtOptions::new(0.5), &[]).unwrap();
        let sol = solve_centralized(&p).unwrap();
        assert!(max_err(&run.p_set, &sol.p_star) < 1e-9);
        assert!(run.plant.omega.iter().all(|w| w.abs() < 1e-9));
    }

    #[test]
    fn reruns_are_identical() {
        let (p, g, ss) = setup();
        let ev = [ScenarioEvent::LoadStep { t: 0.2, agent: 1, delta_kw: 10.0 }];
        let go = || run_rtasdpd(&p, &g, &benchmark::plant(0.01), &ss, &fast_config(9), &RtOptions::new(1.0), &ev).unwrap();
        assert_eq!(go().trace.to_csv_string(), go().trace.to_csv_string());
    }

    #[test]
    fn mismatched_plant_is_rejected() {
        let (p, g, ss) = setup();
        let mut plant = benchmark::plant(0.0);
        plant.kinds.swap(0, 1);
        let err = run_rtasdpd(&p, &g, &plant, &ss, &fast_config(1), &RtOptions::new(1.0), &[]).unwrap_err();
        assert!(matches!(err, RtError::KindMismatch(1)));
    }

    #[test]
    fn agent_mode_ring_toggle_is_allowed() {
        let (p, g, ss) = setup();
        let mut acfg = fast_config(2);
        acfg.plug_mode = PlugMode::Agent;
        let ev = [ScenarioEvent::Toggle { t: 0.1, agent: 4, on: false }];
        assert!(run_rtasdpd(&p, &g, &benchmark::plant(0.0), &ss, &acfg, &RtOptions::new(0.3), &ev).is_ok());
    }
}
