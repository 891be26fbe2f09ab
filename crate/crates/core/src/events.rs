//! Timed scenario events shared by the asynchronous and real-time engines.

use serde::{Deserialize, Serialize};

/// Agent numbers are 1-based, as in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    LoadStep { t: f64, agent: usize, delta_kw: f64 },
    Toggle { t: f64, agent: usize, on: bool },
}

impl ScenarioEvent {
    pub fn time(&self) -> f64 {
        match *self {
            ScenarioEvent::LoadStep { t, .. } | ScenarioEvent::Toggle { t, .. } => t,
        }
    }

    /// 0-based agent index.
    pub fn agent_index(&self) -> usize {
        match *self {
            ScenarioEvent::LoadStep { agent, .. } | ScenarioEvent::Toggle { agent, .. } => agent - 1,
        }
    }
}

/// What a switched-off agent does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlugMode {
    /// The generator disconnects: its box collapses to [0, 0] while the
    /// controller keeps exchanging multipliers. Remaining units re-balance
    /// to the optimum of the reduced problem.
    #[default]
    Generator,
    /// The whole agent stops: it publishes zero generation once, then its
    /// cache freezes and neighbours keep reading the frozen values.
    Agent,
}

/// Events sorted by time; ties keep their configured order.
pub fn sorted(events: &[ScenarioEvent]) -> Vec<ScenarioEvent> {
    let mut ev = events.to_vec();
    ev.sort_by(|a, b| a.time().total_cmp(&b.time()));
    ev
}
