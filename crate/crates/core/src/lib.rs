//! Distributed power dispatch for hybrid AC/DC microgrids.
//!
//! Synchronous (SDPD), asynchronous (ASDPD) and real-time plant-coupled
//! (RTASDPD) dispatch built on a preconditioned operator splitting, with a
//! centralized oracle, a seeded discrete-event simulator and a reduced-order
//! plant surrogate.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod async_engine;
pub mod benchmark;
pub mod config;
pub mod des;
pub mod events;
pub mod oracle;
pub mod par;
pub mod plant;
pub mod problem;
pub mod rt_engine;
pub mod scenario;
pub mod splitting;
pub mod sync_engine;
pub mod topology;
pub mod trace;

pub use oracle::{solve_centralized, ActiveTag, DispatchSolution};
pub use par::Execution;
pub use problem::{AgentSpec, BoxSet, BusKind, DispatchProblem, ProblemError};
pub use splitting::{IterateVector, PhiMetric, StepSizes};
pub use topology::{CommGraph, TopologyError};
