//! Scenario orchestration: runs driven by a [`ScenarioConfig`], the delay
//! sweep, the synchronous/asynchronous wall-clock comparison, and output
//! emission.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::async_engine::{run_asdpd, AsyncConfig, AsyncError, AsyncRun, AsyncSummary};
use crate::config::{parse_config, Algorithm, ConfigError, EtaSetting, OutputFormat, ScenarioConfig};
use crate::des::{ActivationModel, DelayModel, DelayUnit};
use crate::oracle::{solve_centralized, DispatchSolution};
use crate::par::{self, Execution};
use crate::problem::{DispatchProblem, ProblemError};
use crate::rt_engine::{run_rtasdpd, RtError, RtRun, RtSummary};
use crate::splitting::{check_operators, chi_max, fixed_point, OperatorReport, StepSizeError, StepSizes};
use crate::sync_engine::{run_sdpd, SyncError, SyncOptions, SyncRun, SyncSummary};
use crate::topology::{CommGraph, TopologyError};
use crate::trace::{write_json, Trace, TraceError, VERSION};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Steps(#[from] StepSizeError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Async(#[from] AsyncError),
    #[error(transparent)]
    Rt(#[from] RtError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Unsupported(String),
}

/// Scenarios shipped with the crate, mirroring the five benchmark
/// experiments plus the wall-clock comparison.
pub const BUNDLED: [(&str, &str); 6] = [
    ("benchmark_table1_sync", include_str!("../scenarios/benchmark_table1_sync.json")),
    ("benchmark_table1_async_rates", include_str!("../scenarios/benchmark_table1_async_rates.json")),
    ("benchmark_table1_delay_sweep", include_str!("../scenarios/benchmark_table1_delay_sweep.json")),
    ("benchmark_table1_rt_loadsteps", include_str!("../scenarios/benchmark_table1_rt_loadsteps.json")),
    ("benchmark_table1_pnp", include_str!("../scenarios/benchmark_table1_pnp.json")),
    ("benchmark_table1_compare", include_str!("../scenarios/benchmark_table1_compare.json")),
];

pub fn bundled(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| parse_config(text))
}

/// Problem, graph and step sizes of a validated config.
pub struct Setup {
    pub problem: DispatchProblem,
    pub graph: CommGraph,
    pub steps: StepSizes,
}

pub fn setup(cfg: &ScenarioConfig) -> Result<Setup, ScenarioError> {
    let problem = cfg.problem();
    let graph = cfg.comm_graph()?;
    let steps = cfg.step_sizes(&problem, &graph)?;
    Ok(Setup { problem, graph, steps })
}

pub fn solve(cfg: &ScenarioConfig) -> Result<DispatchSolution, ScenarioError> {
    Ok(solve_centralized(&cfg.problem())?)
}

pub fn run_sync(cfg: &ScenarioConfig) -> Result<(SyncRun, StepSizes), ScenarioError> {
    let s = setup(cfg)?;
    let opts = SyncOptions {
        max_iters: cfg.sync.max_iters,
        tol: cfg.sync.tol,
        record_every: cfg.sync.record_every,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut run = run_sdpd(&s.problem, &s.graph, &s.steps, &opts)?;
    run.trace.set_config_hash(&cfg.hash());
    Ok((run, s.steps))
}

fn require_async(cfg: &ScenarioConfig) -> Result<AsyncConfig, ScenarioError> {
    cfg.async_config().ok_or_else(|| ScenarioError::Unsupported("config has no async block".into()))
}

pub fn run_async(cfg: &ScenarioConfig) -> Result<(AsyncRun, StepSizes), ScenarioError> {
    let s = setup(cfg)?;
    let acfg = require_async(cfg)?;
    let mut run = run_asdpd(&s.problem, &s.graph, &s.steps, &acfg, &cfg.events)?;
    run.trace.set_config_hash(&cfg.hash());
    Ok((run, s.steps))
}

pub fn run_rt(cfg: &ScenarioConfig) -> Result<(RtRun, StepSizes), ScenarioError> {
    let s = setup(cfg)?;
    let acfg = require_async(cfg)?;
    let opts = cfg.rt_options().ok_or_else(|| ScenarioError::Unsupported("config has no rt block".into()))?;
    let mut run = run_rtasdpd(&s.problem, &s.graph, &cfg.plant_params(), &s.steps, &acfg, &opts, &cfg.events)?;
    run.trace.set_config_hash(&cfg.hash());
    Ok((run, s.steps))
}

pub fn operator_report(cfg: &ScenarioConfig, samples: usize, exec: Execution) -> Result<OperatorReport, ScenarioError> {
    let s = setup(cfg)?;
    let sol = solve_centralized(&s.problem)?;
    let w_star = fixed_point(&s.problem, &s.graph, &sol.p_star, sol.mu_star);
    Ok(check_operators(&s.problem, &s.graph, &s.steps, &w_star, samples, cfg.seed, exec))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub chi: u64,
    pub seed: u64,
    pub eta: f64,
    pub iterations_to_tol: Option<u64>,
    pub final_error: Option<f64>,
    pub max_observed_staleness: u64,
    /// χ ≤ chi_max(η, n): inside the convergence guarantee.
    pub within_guarantee: bool,
    /// Engine error, if the run failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiSummary {
    pub chi: u64,
    pub eta: f64,
    pub runs: usize,
    pub reached_tol: usize,
    /// Runs that never reached the tolerance count as +∞.
    pub median_iterations: Option<u64>,
    pub median_final_error: Option<f64>,
    pub within_guarantee: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub version: &'static str,
    pub cells: Vec<SweepCell>,
    pub per_chi: Vec<ChiSummary>,
    /// Median iterations non-decreasing in χ.
    pub monotone: bool,
}

fn median<T: Copy + PartialOrd>(mut v: Vec<T>) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Some(v[(v.len() - 1) / 2])
}

/// ASDPD over every (χ, seed) cell: uniform activation, message ages
/// integer-uniform on [0, χ], seeds `cfg.seed .. cfg.seed + seeds`.
pub fn sweep_delay(cfg: &ScenarioConfig, chis: &[u64], seeds: u64, exec: Execution) -> Result<SweepReport, ScenarioError> {
    let s = setup(cfg)?;
    let n = s.problem.n();
    let max_activations = cfg.sweep.as_ref().map_or(200_000, |w| w.max_activations);
    let base = cfg.async_config();
    let mut steps_per_chi = Vec::new();
    for &chi in chis {
        steps_per_chi.push((chi, cfg.step_sizes_for_chi(&s.problem, &s.graph, chi as f64)?));
    }
    let cells: Vec<(u64, u64)> = chis.iter().flat_map(|&c| (0..seeds).map(move |k| (c, k))).collect();
    let mut results = par::map(exec, &cells, |&(chi, k)| {
        let seed = cfg.seed.wrapping_add(k);
        let ss = &steps_per_chi.iter().find(|(c, _)| *c == chi).expect("chi listed").1;
        let mut acfg = AsyncConfig::uniform(chi, seed);
        acfg.max_activations = max_activations;
        if let Some(b) = &base {
            acfg.tol = b.tol;
        }
        let within = chi as f64 <= chi_max(ss.eta, n);
        match run_asdpd(&s.problem, &s.graph, ss, &acfg, &[]) {
            Ok(run) => cell_from(&run, chi, seed, ss.eta, within, None),
            Err(AsyncError::MaxItersExceeded { run, .. }) => cell_from(&run, chi, seed, ss.eta, within, None),
            Err(e) => SweepCell {
                chi,
                seed,
                eta: ss.eta,
                iterations_to_tol: None,
                final_error: None,
                max_observed_staleness: 0,
                within_guarantee: within,
                error: Some(e.to_string()),
            },
        }
    });
    results.sort_by_key(|c| (c.chi, c.seed));

    let per_chi: Vec<ChiSummary> = steps_per_chi
        .iter()
        .map(|(chi, ss)| {
            let mine: Vec<&SweepCell> = results.iter().filter(|c| c.chi == *chi).collect();
            let iters = median(mine.iter().map(|c| c.iterations_to_tol.unwrap_or(u64::MAX)).collect());
            ChiSummary {
                chi: *chi,
                eta: ss.eta,
                runs: mine.len(),
                reached_tol: mine.iter().filter(|c| c.iterations_to_tol.is_some()).count(),
                median_iterations: iters.filter(|&m| m != u64::MAX),
                median_final_error: median(mine.iter().filter_map(|c| c.final_error).collect()),
                within_guarantee: mine.iter().all(|c| c.within_guarantee),
            }
        })
        .collect();
    let key = |c: &ChiSummary| c.median_iterations.unwrap_or(u64::MAX);
    let mut ordered: Vec<&ChiSummary> = per_chi.iter().collect();
    ordered.sort_by_key(|c| c.chi);
    let monotone = ordered.windows(2).all(|w| key(w[0]) <= key(w[1]));
    Ok(SweepReport { config_hash: cfg.hash(), version: VERSION, cells: results, per_chi, monotone })
}

fn cell_from(run: &AsyncRun, chi: u64, seed: u64, eta: f64, within: bool, error: Option<String>) -> SweepCell {
    SweepCell {
        chi,
        seed,
        eta,
        iterations_to_tol: run.iterations_to_tol,
        final_error: run.oracle_error(),
        max_observed_staleness: run.max_staleness,
        within_guarantee: within,
        error,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub config_hash: String,
    pub version: &'static str,
    pub eta: f64,
    pub chi: u64,
    /// max_i (compute_i + slowest incoming delay of agent i).
    pub sync_round_s: f64,
    pub sync_iterations_to_tol: Option<usize>,
    pub sync_wall_clock_s: Option<f64>,
    pub async_activations_to_tol: Option<u64>,
    pub async_wall_clock_s: Option<f64>,
    pub async_max_observed_staleness: u64,
    pub async_not_slower: bool,
}

/// Barrier round cost: every agent waits for its slowest input before the
/// next synchronous round can start.
pub fn barrier_round(graph: &CommGraph, delay: &DelayModel, compute_s: &[f64]) -> f64 {
    (0..graph.n())
        .map(|i| {
            let slowest = graph.reach(i).iter().map(|&j| delay.range(j, i).1).fold(0.0, f64::max);
            compute_s[i] + slowest
        })
        .fold(0.0, f64::max)
}

/// SDPD under the barrier model against ASDPD under the event model, both
/// with the same step sizes. Agents tick at 1/compute_s.
pub fn compare_sync_async(cfg: &ScenarioConfig) -> Result<CompareReport, ScenarioError> {
    let cmp = cfg.compare.as_ref().ok_or_else(|| ScenarioError::Unsupported("config has no compare block".into()))?;
    let mut acfg = require_async(cfg)?;
    if acfg.delay.unit != DelayUnit::Seconds {
        return Err(ScenarioError::Unsupported("compare needs delays in seconds".into()));
    }
    acfg.activation = ActivationModel::PerAgentRates { rates_hz: cmp.compute_s.iter().map(|c| 1.0 / c).collect() };
    let problem = cfg.problem();
    let graph = cfg.comm_graph()?;
    let chi = acfg.chi as f64;
    let ss = match cfg.steps.eta {
        EtaSetting::Value(_) => cfg.step_sizes(&problem, &graph)?,
        EtaSetting::Named(_) => cfg.step_sizes_for_chi(&problem, &graph, chi)?,
    };

    let opts = SyncOptions { record_every: usize::MAX, max_iters: cfg.sync.max_iters, tol: cfg.sync.tol, ..Default::default() };
    let sync = match run_sdpd(&problem, &graph, &ss, &opts) {
        Ok(r) => r,
        Err(SyncError::MaxItersExceeded { run, .. }) => *run,
        Err(e) => return Err(e.into()),
    };
    let round = barrier_round(&graph, &acfg.delay, &cmp.compute_s);
    let sync_iters = sync.iterations_to[0];

    let run = match run_asdpd(&problem, &graph, &ss, &acfg, &[]) {
        Ok(r) => r,
        Err(AsyncError::MaxItersExceeded { run, .. }) => *run,
        Err(e) => return Err(e.into()),
    };
    let sync_wall = sync_iters.map(|k| k as f64 * round);
    let async_wall = run.time_to_tol;
    let async_not_slower = match (async_wall, sync_wall) {
        (Some(a), Some(s)) => a <= s,
        (Some(_), None) => true,
        _ => false,
    };
    Ok(CompareReport {
        config_hash: cfg.hash(),
        version: VERSION,
        eta: ss.eta,
        chi: acfg.chi,
        sync_round_s: round,
        sync_iterations_to_tol: sync_iters,
        sync_wall_clock_s: sync_wall,
        async_activations_to_tol: run.iterations_to_tol,
        async_wall_clock_s: async_wall,
        async_max_observed_staleness: run.max_staleness,
        async_not_slower,
    })
}

/// Trace and summary of whichever engine the config names.
pub enum RunResult {
    Sync(Box<SyncRun>, SyncSummary),
    Async(Box<AsyncRun>, AsyncSummary),
    Rt(Box<RtRun>, RtSummary),
}

impl RunResult {
    pub fn trace(&self) -> &Trace {
        match self {
            RunResult::Sync(r, _) => &r.trace,
            RunResult::Async(r, _) => &r.trace,
            RunResult::Rt(r, _) => &r.trace,
        }
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let v = match self {
            RunResult::Sync(_, s) => serde_json::to_value(s),
            RunResult::Async(_, s) => serde_json::to_value(s),
            RunResult::Rt(_, s) => serde_json::to_value(s),
        };
        v.expect("summaries serialize")
    }
}

pub fn run_configured(cfg: &ScenarioConfig) -> Result<RunResult, ScenarioError> {
    Ok(match cfg.algorithm {
        Algorithm::Sdpd => {
            let (run, ss) = run_sync(cfg)?;
            let summary = run.summary(&ss, cfg.seed);
            RunResult::Sync(Box::new(run), summary)
        }
        Algorithm::Asdpd => {
            let (run, _) = run_async(cfg)?;
            let summary = run.summary(cfg.seed);
            RunResult::Async(Box::new(run), summary)
        }
        Algorithm::Rtasdpd => {
            let (run, _) = run_rt(cfg)?;
            let summary = run.summary(cfg.seed);
            RunResult::Rt(Box::new(run), summary)
        }
    })
}

/// Summary JSON with the provenance fields every output carries.
pub fn stamped<T: Serialize>(cfg: &ScenarioConfig, body: &T) -> serde_json::Value {
    serde_json::json!({
        "scenario": cfg.name,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": VERSION,
        "result": body,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.display().to_string(), source }
}

/// Write `<stem>_trace.{csv,json}` and `<stem>_summary.json` into `dir`.
pub fn write_run(dir: &Path, stem: &str, trace: &Trace, summary: &serde_json::Value, format: OutputFormat) -> Result<Vec<PathBuf>, ScenarioError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace_path = dir.join(match format {
        OutputFormat::Csv => format!("{stem}_trace.csv"),
        OutputFormat::Json => format!("{stem}_trace.json"),
    });
    let file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    let out = std::io::BufWriter::new(file);
    match format {
        OutputFormat::Csv => trace.write_csv(out)?,
        OutputFormat::Json => trace.write_json(out)?,
    }
    let summary_path = dir.join(format!("{stem}_summary.json"));
    write_summary(&summary_path, summary)?;
    Ok(vec![trace_path, summary_path])
}

pub fn write_summary<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_json(std::io::BufWriter::new(file), value)?;
    Ok(())
}
