//! Scenario configuration: JSON on disk, validated in one pass.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::async_engine::AsyncConfig;
use crate::events::ScenarioEvent;
use crate::plant::{Estimator, Line, PlantParams};
use crate::problem::{AgentSpec, BusKind, DispatchProblem};
use crate::rt_engine::{RtInit, RtOptions};
use crate::splitting::StepSizes;
use crate::topology::CommGraph;

/// Safety factor applied to the relaxation bound when `eta` is `"auto"`.
pub const AUTO_ETA_FACTOR: f64 = 0.9;
const ETA_CAP: f64 = 0.999;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sdpd,
    Asdpd,
    Rtasdpd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sdpd => "sdpd",
            Algorithm::Asdpd => "asdpd",
            Algorithm::Rtasdpd => "rtasdpd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub agents: Vec<AgentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeList {
    /// 1-based agent pairs.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Defaults to the ring over all agents.
    #[serde(default)]
    pub communication: Option<EdgeList>,
    /// Defaults to the communication graph.
    #[serde(default)]
    pub physical: Option<EdgeList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Value(f64),
    Named(String),
}

impl Default for EtaSetting {
    fn default() -> Self {
        EtaSetting::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    #[serde(default = "default_margin")]
    pub kappa_margin: f64,
    #[serde(default)]
    pub sigma_mu: Option<f64>,
    #[serde(default)]
    pub sigma_z: Option<f64>,
    #[serde(default)]
    pub sigma_g: Option<f64>,
    #[serde(default)]
    pub eta: EtaSetting,
}

fn default_margin() -> f64 {
    0.01
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { kappa_margin: default_margin(), sigma_mu: None, sigma_z: None, sigma_g: None, eta: EtaSetting::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_sync_tol")]
    pub tol: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_max_iters() -> usize {
    100_000
}

fn default_sync_tol() -> f64 {
    1e-10
}

fn default_record_every() -> usize {
    1
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self { max_iters: default_max_iters(), tol: default_sync_tol(), record_every: default_record_every() }
    }
}

/// Plant block. Per-bus vectors default to a uniform value; the line list
/// follows the physical graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default)]
    pub m: Option<Vec<f64>>,
    #[serde(default)]
    pub d: Option<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub v_nom: f64,
    #[serde(default = "default_scale")]
    pub interlink_scale: f64,
    /// B_ij on AC–AC lines.
    #[serde(default = "default_line")]
    pub ac_line_coeff: f64,
    /// v_nom/R_ij on DC–DC lines.
    #[serde(default = "default_line")]
    pub dc_line_coeff: f64,
    /// k_ij on AC–DC interlinks.
    #[serde(default = "default_interlink")]
    pub interlink_coeff: f64,
    #[serde(default)]
    pub loss_factor: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_tau")]
    pub actuator_tau: f64,
}

fn one() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    10.0
}
fn default_line() -> f64 {
    200.0
}
fn default_interlink() -> f64 {
    100.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_tau() -> f64 {
    1e-2
}

impl Default for PlantConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all plant fields have defaults")
    }
}

impl PlantConfig {
    pub fn build(&self, kinds: &[BusKind], edges: &[(usize, usize)]) -> PlantParams {
        let n = kinds.len();
        let per_bus = |v: &Option<Vec<f64>>, x: f64| v.clone().unwrap_or_else(|| vec![x; n]);
        let lines = edges
            .iter()
            .map(|&(a, b)| {
                let coeff = match (kinds[a], kinds[b]) {
                    (BusKind::Ac, BusKind::Ac) => self.ac_line_coeff,
                    (BusKind::Dc, BusKind::Dc) => self.dc_line_coeff,
                    _ => self.interlink_coeff,
                };
                Line { a, b, coeff, loss: self.loss_factor }
            })
            .collect();
        PlantParams {
            kinds: kinds.to_vec(),
            m: per_bus(&self.m, 5.0),
            d: per_bus(&self.d, 20.0),
            c: per_bus(&self.c, 400.0),
            v_nom: self.v_nom,
            interlink_scale: self.interlink_scale,
            lines,
            dt: self.dt,
            actuator_tau: self.actuator_tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtConfig {
    pub horizon_s: f64,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub init: RtInit,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
}

fn default_sample_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub chis: Vec<u64>,
    pub seeds: u64,
    #[serde(default = "default_sweep_max")]
    pub max_activations: u64,
}

fn default_sweep_max() -> u64 {
    200_000
}

/// Wall-clock model for the synchronous/asynchronous comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Per-agent compute time of one update (s). Agents tick at 1/compute.
    pub compute_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub steps: StepConfig,
    #[serde(default)]
    pub sync: SyncConfig,
    #[serde(default, rename = "async")]
    pub asynchronous: Option<AsyncConfig>,
    #[serde(default)]
    pub plant: Option<PlantConfig>,
    #[serde(default)]
    pub rt: Option<RtConfig>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_edges(label: &str, edges: &[(usize, usize)], n: usize, errors: &mut Vec<String>) {
    for &(a, b) in edges {
        if a == 0 || b == 0 || a > n || b > n {
            errors.push(format!("{label} edge ({a}, {b}) references an agent outside 1..={n}"));
        } else if a == b {
            errors.push(format!("{label} edge ({a}, {b}) is a self-loop"));
        }
    }
}

impl ScenarioConfig {
    pub fn n(&self) -> usize {
        self.problem.agents.len()
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        let mut errors = Vec::new();
        if n == 0 {
            errors.push("problem.agents is empty".into());
        }
        if let Err(e) = DispatchProblem::new(self.problem.agents.clone()) {
            errors.push(format!("problem: {e}"));
        }
        if let Some(g) = &self.graph.communication {
            check_edges("communication", &g.edges, n, &mut errors);
        }
        if let Some(g) = &self.graph.physical {
            check_edges("physical", &g.edges, n, &mut errors);
        }
        if errors.is_empty() {
            if let Err(e) = self.comm_graph() {
                errors.push(format!("communication graph: {e}"));
            }
        }
        match &self.steps.eta {
            EtaSetting::Value(v) if !(*v > 0.0 && *v < 1.0) => errors.push(format!("steps.eta = {v} must lie in (0, 1)")),
            EtaSetting::Named(s) if s != "auto" => errors.push(format!("steps.eta must be a number or \"auto\", got {s:?}")),
            _ => {}
        }
        if !(self.steps.kappa_margin > 0.0) {
            errors.push("steps.kappa_margin must be positive".into());
        }
        for ev in &self.events {
            let a = match ev {
                ScenarioEvent::LoadStep { agent, .. } | ScenarioEvent::Toggle { agent, .. } => *agent,
            };
            if a == 0 || a > n {
                errors.push(format!("event at t = {} references agent {a} outside 1..={n}", ev.time()));
            }
            if !(ev.time() >= 0.0) {
                errors.push(format!("event time {} must be non-negative", ev.time()));
            }
        }
        if let Some(a) = &self.asynchronous {
            if n > 0 {
                if let Err(e) = a.validate(n) {
                    errors.push(format!("async: {e}"));
                }
            }
        }
        let needs = |what: &str, present: bool, errors: &mut Vec<String>| {
            if !present {
                errors.push(format!("algorithm {} requires the `{what}` block", self.algorithm.name()));
            }
        };
        match self.algorithm {
            Algorithm::Sdpd => {}
            Algorithm::Asdpd => needs("async", self.asynchronous.is_some(), &mut errors),
            Algorithm::Rtasdpd => {
                needs("async", self.asynchronous.is_some(), &mut errors);
                needs("rt", self.rt.is_some(), &mut errors);
                if let Some(rt) = &self.rt {
                    if !(rt.horizon_s > 0.0) {
                        errors.push("rt.horizon_s must be positive".into());
                    }
                    if rt.sample_every == 0 {
                        errors.push("rt.sample_every must be at least 1".into());
                    }
                }
                if errors.is_empty() {
                    if let Err(e) = self.plant_params().validate() {
                        errors.push(format!("plant: {e}"));
                    }
                }
            }
        }
        if let Some(p) = &self.plant {
            for (label, v) in [("m", &p.m), ("d", &p.d), ("c", &p.c)] {
                if let Some(v) = v {
                    if v.len() != n {
                        errors.push(format!("plant.{label} has {} entries for {n} agents", v.len()));
                    }
                }
            }
        }
        if let Some(c) = &self.compare {
            if c.compute_s.len() != n || c.compute_s.iter().any(|x| !(*x > 0.0)) {
                errors.push(format!("compare.compute_s needs {n} positive entries"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.chis.is_empty() || s.seeds == 0 {
                errors.push("sweep needs at least one chi and one seed".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn problem(&self) -> DispatchProblem {
        DispatchProblem::new(self.problem.agents.clone()).expect("validated")
    }

    fn comm_edges(&self) -> Vec<(usize, usize)> {
        match &self.graph.communication {
            Some(g) => g.edges.clone(),
            None => {
                let n = self.n();
                match n {
                    1 => vec![],
                    2 => vec![(1, 2)],
                    _ => (1..=n).map(|i| (i, i % n + 1)).collect(),
                }
            }
        }
    }

    pub fn comm_graph(&self) -> Result<CommGraph, crate::TopologyError> {
        CommGraph::build(self.n(), &self.comm_edges())
    }

    /// Physical lines as 0-based pairs.
    pub fn physical_edges(&self) -> Vec<(usize, usize)> {
        let edges = self.graph.physical.as_ref().map_or_else(|| self.comm_edges(), |g| g.edges.clone());
        edges.into_iter().map(|(a, b)| (a - 1, b - 1)).collect()
    }

    pub fn plant_params(&self) -> PlantParams {
        let kinds: Vec<BusKind> = self.problem.agents.iter().map(|a| a.kind).collect();
        self.plant.clone().unwrap_or_default().build(&kinds, &self.physical_edges())
    }

    /// Async block with the top-level seed applied.
    pub fn async_config(&self) -> Option<AsyncConfig> {
        self.asynchronous.clone().map(|mut a| {
            a.seed = self.seed;
            a
        })
    }

    pub fn rt_options(&self) -> Option<RtOptions> {
        self.rt.as_ref().map(|rt| {
            let mut o = RtOptions::new(rt.horizon_s);
            o.estimator = rt.estimator;
            o.init = rt.init;
            o.sample_every = rt.sample_every;
            o
        })
    }

    /// Staleness bound the auto relaxation has to respect. Only ASDPD
    /// carries one; SDPD and the real-time loop use χ = 0.
    fn auto_chi(&self) -> f64 {
        match (self.algorithm, &self.asynchronous) {
            (Algorithm::Asdpd, Some(a)) => a.chi as f64,
            _ => 0.0,
        }
    }

    /// Resolve step sizes: sigma overrides or the equal-sigma search, then
    /// η either as given or 0.9·eta_max for the staleness bound in force.
    pub fn step_sizes(&self, problem: &DispatchProblem, graph: &CommGraph) -> Result<StepSizes, crate::splitting::StepSizeError> {
        self.step_sizes_for_chi(problem, graph, self.auto_chi())
    }

    pub fn step_sizes_for_chi(
        &self,
        problem: &DispatchProblem,
        graph: &CommGraph,
        chi: f64,
    ) -> Result<StepSizes, crate::splitting::StepSizeError> {
        let s = &self.steps;
        let base = match (s.sigma_mu, s.sigma_z, s.sigma_g) {
            (None, None, None) => StepSizes::choose(problem, graph, s.kappa_margin)?,
            (m, z, g) => {
                let auto = StepSizes::choose(problem, graph, s.kappa_margin)?;
                let sig = (m.unwrap_or(auto.sigma_mu), z.unwrap_or(auto.sigma_z), g.unwrap_or(auto.sigma_g));
                StepSizes::from_sigmas(problem, graph, s.kappa_margin, sig, auto.eta)?
            }
        };
        let eta = match s.eta {
            EtaSetting::Value(v) => v,
            EtaSetting::Named(_) => (AUTO_ETA_FACTOR * base.eta_bound(chi, problem.n())).min(ETA_CAP),
        };
        base.with_eta(eta)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// sha256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;

    fn minimal(extra: &str) -> String {
        let agents: Vec<String> = (0..6)
            .map(|i| {
                format!(
                    r#"{{"a": {}, "b": {}, "p_min": 0, "p_max": {}, "p_d": {}, "kind": "{}"}}"#,
                    benchmark::A[i],
                    benchmark::B[i],
                    benchmark::P_MAX[i],
                    benchmark::STEP_DEMAND[i],
                    if benchmark::KIND[i] == BusKind::Ac { "ac" } else { "dc" }
                )
            })
            .collect();
        format!(r#"{{"name": "t", "algorithm": "sdpd", "problem": {{"agents": [{}]}}{extra}}}"#, agents.join(","))
    }

    #[test]
    fn defaults_give_the_benchmark() {
        let cfg = parse_config(&minimal("")).unwrap();
        let (p, g) = benchmark::table1();
        assert_eq!(cfg.problem().agents(), p.agents());
        assert_eq!(cfg.comm_graph().unwrap().edges(), g.edges());
        assert_eq!(cfg.plant_params(), benchmark::plant(0.0));
    }

    #[test]
    fn auto_eta_uses_the_bound() {
        let cfg = parse_config(&minimal(r#", "steps": {"eta": "auto"}"#)).unwrap();
        let (p, g) = benchmark::table1();
        let base = StepSizes::choose(&p, &g, 0.01).unwrap();
        for chi in [0.0, 1.0, 4.0] {
            let ss = cfg.step_sizes_for_chi(&p, &g, chi).unwrap();
            let want = (0.9 * crate::splitting::eta_max(chi, 6, base.kappa, base.zeta)).min(0.999);
            assert!((ss.eta - want).abs() < 1e-15);
        }
        let fixed = parse_config(&minimal(r#", "steps": {"eta": 0.3}"#)).unwrap();
        assert_eq!(fixed.step_sizes(&p, &g).unwrap().eta, 0.3);
    }

    #[test]
    fn errors_are_aggregated() {
        let text = minimal(
            r#", "graph": {"communication": {"edges": [[1, 7], [2, 2]]}}, "steps": {"eta": "fast"},
               "events": [{"kind": "load_step", "t": 1.0, "agent": 9, "delta_kw": 5}]"#,
        );
        match parse_config(&text) {
            Err(ConfigError::Invalid(errs)) => {
                assert_eq!(errs.len(), 4, "{errs:?}");
                assert!(errs[0].contains("agent outside"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_blocks_are_reported() {
        let text = minimal("").replace("\"sdpd\"", "\"rtasdpd\"");
        match parse_config(&text) {
            Err(ConfigError::Invalid(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_fail_to_parse() {
        assert!(matches!(parse_config(&minimal(r#", "colour": 1"#)), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config(&minimal("")).unwrap();
        let b = a.clone().with_seed(5);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
