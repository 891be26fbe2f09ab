//! Economic dispatch data: quadratic generation costs, box limits, demands and
//! the AC/DC partition of the agents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Ac,
    Dc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolatedBound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("problem must have at least one agent")]
    Empty,
    #[error("agent {agent}: {what}")]
    InvalidAgent { agent: usize, what: String },
    #[error("infeasible: total demand {sum_demand} violates the {bound:?} capacity bound (Σp_min = {sum_min}, Σp_max = {sum_max})")]
    Infeasible {
        bound: ViolatedBound,
        sum_min: f64,
        sum_demand: f64,
        sum_max: f64,
    },
}

/// Per-agent data of one microgrid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub a: f64,
    pub b: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub p_d: f64,
    pub kind: BusKind,
}

/// Box Ω = ∏ [lower_i, upper_i] in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn clip(&self, i: usize, x: f64) -> f64 {
        x.max(self.lower[i]).min(self.upper[i])
    }

    pub fn contains(&self, i: usize, x: f64) -> bool {
        x >= self.lower[i] && x <= self.upper[i]
    }

    /// Euclidean projection; componentwise clipping because Ω is a box.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, &v)| self.clip(i, v)).collect()
    }
}

/// Sums backing the feasibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub sum_min: f64,
    pub sum_demand: f64,
    pub sum_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    agents: Vec<AgentSpec>,
}

impl DispatchProblem {
    /// Validates per-agent data. Feasibility of the balance constraint is
    /// checked separately by [`DispatchProblem::check_slater`].
    pub fn new(agents: Vec<AgentSpec>) -> Result<Self, ProblemError> {
        if agents.is_empty() {
            return Err(ProblemError::Empty);
        }
        for (idx, ag) in agents.iter().enumerate() {
            let bad = |what: &str| ProblemError::InvalidAgent {
                agent: idx + 1,
                what: what.to_string(),
            };
            let finite = [ag.a, ag.b, ag.p_min, ag.p_max, ag.p_d].iter().all(|v| v.is_finite());
            if !finite {
                return Err(bad("non-finite value"));
            }
            if ag.a <= 0.0 {
                return Err(bad("quadratic coefficient a must be > 0"));
            }
            if ag.b < 0.0 {
                return Err(bad("linear coefficient b must be >= 0"));
            }
            if ag.p_min > ag.p_max {
                return Err(bad("p_min exceeds p_max"));
            }
        }
        Ok(Self { agents })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    pub fn n_ac(&self) -> usize {
        self.agents.iter().filter(|a| a.kind == BusKind::Ac).count()
    }

    pub fn n_dc(&self) -> usize {
        self.n() - self.n_ac()
    }

    pub fn kind(&self, i: usize) -> BusKind {
        self.agents[i].kind
    }

    pub fn demand(&self, i: usize) -> f64 {
        self.agents[i].p_d
    }

    pub fn demands(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.p_d).collect()
    }

    pub fn total_demand(&self) -> f64 {
        self.agents.iter().map(|a| a.p_d).sum()
    }

    pub fn a_min(&self) -> f64 {
        self.agents.iter().map(|a| a.a).fold(f64::INFINITY, f64::min)
    }

    pub fn a_max(&self) -> f64 {
        self.agents.iter().map(|a| a.a).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn bounds(&self) -> BoxSet {
        BoxSet::new(
            self.agents.iter().map(|a| a.p_min).collect(),
            self.agents.iter().map(|a| a.p_max).collect(),
        )
    }

    /// f_i(p) = ½ a_i p² + b_i p and its derivative.
    pub fn cost_and_grad(&self, i: usize, p: f64) -> (f64, f64) {
        cost_and_grad(self.agents[i].a, self.agents[i].b, p)
    }

    pub fn grad(&self, i: usize, p: f64) -> f64 {
        self.agents[i].a * p + self.agents[i].b
    }

    pub fn total_cost(&self, p: &[f64]) -> f64 {
        p.iter().enumerate().map(|(i, &v)| self.cost_and_grad(i, v).0).sum()
    }

    pub fn check_slater(&self) -> Result<FeasibilityReport, ProblemError> {
        let report = FeasibilityReport {
            sum_min: self.agents.iter().map(|a| a.p_min).sum(),
            sum_demand: self.total_demand(),
            sum_max: self.agents.iter().map(|a| a.p_max).sum(),
        };
        let bound = if report.sum_demand < report.sum_min {
            Some(ViolatedBound::Lower)
        } else if report.sum_demand > report.sum_max {
            Some(ViolatedBound::Upper)
        } else {
            None
        };
        match bound {
            None => Ok(report),
            Some(bound) => Err(ProblemError::Infeasible {
                bound,
                sum_min: report.sum_min,
                sum_demand: report.sum_demand,
                sum_max: report.sum_max,
            }),
        }
    }

    /// Copy with agent `i`'s demand shifted by `delta` kW.
    pub fn with_demand_step(&self, i: usize, delta: f64) -> Self {
        let mut agents = self.agents.clone();
        agents[i].p_d += delta;
        Self { agents }
    }

    /// Copy with agent `i`'s generation box replaced.
    pub fn with_bounds(&self, i: usize, p_min: f64, p_max: f64) -> Self {
        let mut agents = self.agents.clone();
        agents[i].p_min = p_min;
        agents[i].p_max = p_max;
        Self { agents }
    }
}

/// Quadratic cost and marginal cost at `p`.
pub fn cost_and_grad(a: f64, b: f64, p: f64) -> (f64, f64) {
    (0.5 * a * p * p + b * p, a * p + b)
}
