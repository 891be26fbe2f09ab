//! The six-microgrid hybrid benchmark: cost data and limits per generator,
//! MG2 and MG5 on DC buses, and a ring communication graph.
//!
//! The demand split is a stand-in. Only the totals are fixed by the
//! benchmark: 400.29 kW initially, 460.29 kW after the load increase.

use crate::config::PlantConfig;
use crate::plant::PlantParams;
use crate::problem::{AgentSpec, BusKind, DispatchProblem};
use crate::topology::CommGraph;

pub const A: [f64; 6] = [0.8, 1.0, 0.65, 0.75, 0.9, 0.85];
pub const B: [f64; 6] = [0.01, 0.01, 0.014, 0.012, 0.01, 0.01];
pub const P_MAX: [f64; 6] = [85.0, 80.0, 90.0, 85.0, 80.0, 80.0];
pub const P_MIN: [f64; 6] = [0.0; 6];
pub const KIND: [BusKind; 6] = [BusKind::Ac, BusKind::Dc, BusKind::Ac, BusKind::Ac, BusKind::Dc, BusKind::Ac];

/// Pre-event demand per agent (sums to 400.29 kW).
pub const BASE_DEMAND: [f64; 6] = [70.0, 60.0, 75.0, 65.0, 60.0, 70.29];
/// Demand after +60 kW at MG2 (sums to 460.29 kW).
pub const STEP_DEMAND: [f64; 6] = [70.0, 120.0, 75.0, 65.0, 60.0, 70.29];

/// Generation reported at the end of the first load stage.
pub const REPORTED_STAGE1: [f64; 6] = [79.32, 63.60, 90.0, 81.82, 70.47, 75.08];

pub fn agents(demand: &[f64; 6]) -> Vec<AgentSpec> {
    (0..6)
        .map(|i| AgentSpec { a: A[i], b: B[i], p_min: P_MIN[i], p_max: P_MAX[i], p_d: demand[i], kind: KIND[i] })
        .collect()
}

pub fn problem_with_demand(demand: &[f64; 6]) -> DispatchProblem {
    DispatchProblem::new(agents(demand)).expect("benchmark data is valid")
}

pub fn ring() -> CommGraph {
    CommGraph::ring(6).expect("6-ring is connected")
}

/// Benchmark at 460.29 kW total demand on the ring.
pub fn table1() -> (DispatchProblem, CommGraph) {
    (problem_with_demand(&STEP_DEMAND), ring())
}

/// Physical network on the same ring with the default plant block: AC
/// buses M = 5 kW·s², D = 20 kW·s, DC buses C = 400 kW·s. `loss` is applied
/// to every line.
pub fn plant(loss: f64) -> PlantParams {
    let edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
    PlantConfig { loss_factor: loss, ..PlantConfig::default() }.build(&KIND, &edges)
}
