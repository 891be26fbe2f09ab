//! Centralized ground truth for the dispatch problem.
//!
//! With a single balance equality and box limits the optimum is
//! `p_i(λ) = clip((λ - b_i)/a_i, p_min_i, p_max_i)` for the unique marginal
//! cost λ at which `Σ p_i(λ) = Σ p_d`. The aggregate response is continuous
//! and non-decreasing in λ, so bisection finds it. A final pass re-solves λ
//! in closed form on the detected free set, which makes the balance exact to
//! rounding.

use serde::Serialize;

use crate::problem::{DispatchProblem, ProblemError};

const BOUND_TIE: f64 = 1e-9;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveTag {
    Lower,
    Interior,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSolution {
    pub p_star: Vec<f64>,
    /// Common multiplier μ*; the marginal cost is −μ*.
    pub mu_star: f64,
    pub active_set: Vec<ActiveTag>,
    pub objective: f64,
}

impl DispatchSolution {
    pub fn marginal_cost(&self) -> f64 {
        -self.mu_star
    }
}

fn response(problem: &DispatchProblem, lambda: f64) -> f64 {
    problem
        .agents()
        .iter()
        .map(|ag| ((lambda - ag.b) / ag.a).clamp(ag.p_min, ag.p_max))
        .sum()
}

pub fn solve_centralized(problem: &DispatchProblem) -> Result<DispatchSolution, ProblemError> {
    let feas = problem.check_slater()?;
    let demand = feas.sum_demand;
    let agents = problem.agents();

    let mut lo = agents.iter().map(|a| a.a * a.p_min + a.b).fold(f64::INFINITY, f64::min);
    let mut hi = agents.iter().map(|a| a.a * a.p_max + a.b).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-10 * demand.abs().max(1.0);

    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        lambda = 0.5 * (lo + hi);
        let r = response(problem, lambda) - demand;
        if r.abs() < tol || lambda <= lo || lambda >= hi {
            break;
        }
        if r < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }

    let lambda = polish(problem, lambda, demand).unwrap_or(lambda);

    let p_star: Vec<f64> = agents
        .iter()
        .map(|ag| ((lambda - ag.b) / ag.a).clamp(ag.p_min, ag.p_max))
        .collect();
    let active_set = p_star
        .iter()
        .zip(agents)
        .map(|(&p, ag)| {
            if (p - ag.p_min).abs() <= BOUND_TIE {
                ActiveTag::Lower
            } else if (p - ag.p_max).abs() <= BOUND_TIE {
                ActiveTag::Upper
            } else {
                ActiveTag::Interior
            }
        })
        .collect();
    Ok(DispatchSolution {
        objective: problem.total_cost(&p_star),
        p_star,
        mu_star: -lambda,
        active_set,
    })
}

/// Closed-form λ on the free set implied by `lambda`; accepted only if it
/// keeps the same clipping pattern.
fn polish(problem: &DispatchProblem, lambda: f64, demand: f64) -> Option<f64> {
    let agents = problem.agents();
    let mut fixed = 0.0;
    let mut inv_a = 0.0;
    let mut b_over_a = 0.0;
    let pattern: Vec<i8> = agents
        .iter()
        .map(|ag| {
            let raw = (lambda - ag.b) / ag.a;
            if raw <= ag.p_min {
                fixed += ag.p_min;
                -1
            } else if raw >= ag.p_max {
                fixed += ag.p_max;
                1
            } else {
                inv_a += 1.0 / ag.a;
                b_over_a += ag.b / ag.a;
                0
            }
        })
        .collect();
    if inv_a == 0.0 {
        return None;
    }
    let candidate = (demand - fixed + b_over_a) / inv_a;
    let same = agents.iter().zip(&pattern).all(|(ag, &tag)| {
        let raw = (candidate - ag.b) / ag.a;
        match tag {
            -1 => raw <= ag.p_min + BOUND_TIE,
            1 => raw >= ag.p_max - BOUND_TIE,
            _ => raw >= ag.p_min - BOUND_TIE && raw <= ag.p_max + BOUND_TIE,
        }
    });
    let before = (response(problem, lambda) - demand).abs();
    let after = (response(problem, candidate) - demand).abs();
    (same && after <= before).then_some(candidate)
}
