use serde::Serialize;

use super::mdp::TabularMdp;
use super::operators::{bellman_optimality, highway_operator, LookaheadSpec};
use crate::error::{validation, Error, Result};

pub const VALUE_ITERATION_BUDGET: usize = 1_000_000;

/// Successive-iterate change below which the iterate is within `tol` of the
/// fixed point of a `γ`-contraction.
pub fn stop_threshold(tol: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        tol
    } else {
        tol * (1.0 - gamma) / (2.0 * gamma)
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Bellman optimality iteration from `V = 0`. Returns the final iterate and
/// the number of sweeps.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(Vec<f64>, usize)> {
    if !(tol > 0.0) {
        return Err(validation!("tolerance must be positive, got {}", tol));
    }
    let threshold = stop_threshold(tol, mdp.gamma);
    let mut v = vec![0.0; mdp.ns];
    for it in 1..=VALUE_ITERATION_BUDGET {
        let next = bellman_optimality(&v, mdp);
        let delta = sup_distance(&next, &v);
        v = next;
        if delta < threshold {
            return Ok((v, it));
        }
    }
    Err(Error::Numeric(format!(
        "value iteration did not reach tolerance {tol} within {VALUE_ITERATION_BUDGET} sweeps"
    )))
}

#[derive(Clone, Debug, Serialize)]
pub struct HighwayRun {
    pub values: Vec<f64>,
    pub optimal: Vec<f64>,
    pub iterations: usize,
    /// Successive iterates settled below the stopping threshold within budget.
    pub settled: bool,
    /// `‖V − V*‖∞`.
    pub gap: f64,
    pub converged_to_optimal: bool,
}

/// Iterates the highway operator from `V = 0` with the same stopping rule as
/// [`value_iteration`] and compares against `V*` (computed at `tol / 1000`).
/// Running out of budget is reported, not raised.
pub fn highway_value_iteration(
    mdp: &TabularMdp,
    spec: &LookaheadSpec,
    tol: f64,
    max_iters: usize,
) -> Result<HighwayRun> {
    spec.validate(mdp)?;
    let (optimal, _) = value_iteration(mdp, tol / 1000.0)?;
    let threshold = stop_threshold(tol, mdp.gamma);
    let mut v = vec![0.0; mdp.ns];
    let mut settled = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let next = highway_operator(&v, mdp, spec)?;
        iterations += 1;
        let delta = sup_distance(&next, &v);
        v = next;
        if !v.iter().all(|x| x.is_finite()) {
            break;
        }
        if delta < threshold {
            settled = true;
            break;
        }
    }
    let gap = sup_distance(&v, &optimal);
    Ok(HighwayRun { values: v, optimal, iterations, settled, gap, converged_to_optimal: settled && gap < 10.0 * tol })
}
