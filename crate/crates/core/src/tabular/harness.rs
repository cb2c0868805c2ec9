use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::mdp::{dirichlet_row, TabularMdp};
use super::operators::LookaheadSpec;
use super::solvers::highway_value_iteration;
use crate::error::{validation, Result};
use crate::seed;

/// Sup-norm gap above which an unfiltered fixed point counts as wrong.
pub const GAP_THRESHOLD: f64 = 1e-2;

/// Random MDP with `nS ∈ 1..=6`, `nA ∈ 1..=3` and `γ = 0.9`.
pub fn random_instance<R: Rng>(rng: &mut R) -> TabularMdp {
    let ns = rng.random_range(1..=6);
    let na = rng.random_range(1..=3);
    TabularMdp::random(ns, na, 0.9, rng).expect("generated MDP is valid")
}

/// One to three Dirichlet(1) lookahead policies, a nonempty random subset of
/// depths `{1, 2, 3, 4}` and temperatures uniform in `(0, 10]`.
pub fn random_spec<R: Rng>(mdp: &TabularMdp, use_filter_max: bool, swap_order: bool, rng: &mut R) -> LookaheadSpec {
    let count = rng.random_range(1..=3);
    let policies = (0..count)
        .map(|_| (0..mdp.ns).flat_map(|_| dirichlet_row(mdp.na, rng)).collect())
        .collect();
    let depths = loop {
        let d: Vec<usize> = (1..=4).filter(|_| rng.random::<bool>()).collect();
        if !d.is_empty() {
            break d;
        }
    };
    let mut temperature = || 10.0 * (1.0 - rng.random::<f64>());
    LookaheadSpec {
        policies,
        depths,
        alpha_policy: temperature(),
        alpha_depth: temperature(),
        use_filter_max,
        swap_order,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularCheck {
    pub mdps: usize,
    pub seed: u64,
    pub use_filter_max: bool,
    pub swap_order: bool,
    pub tol: f64,
    pub max_iters: usize,
    /// Total (MDP, spec) pairs tried when hunting for an unfiltered counterexample.
    pub search_budget: usize,
}

impl Default for TabularCheck {
    fn default() -> Self {
        TabularCheck {
            mdps: 100,
            seed: 0,
            use_filter_max: true,
            swap_order: false,
            tol: 1e-6,
            max_iters: 10_000,
            search_budget: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub ns: usize,
    pub na: usize,
    pub policies: usize,
    pub depths: Vec<usize>,
    pub alpha_policy: f64,
    pub alpha_depth: f64,
    pub iterations: usize,
    pub settled: bool,
    pub gap: f64,
    pub converged_to_optimal: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub mdp: TabularMdp,
    pub spec: LookaheadSpec,
    pub iterations: usize,
    pub gap: f64,
    pub fixed_point: Vec<f64>,
    pub optimal: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TabularReport {
    pub seed: u64,
    pub use_filter_max: bool,
    pub swap_order: bool,
    pub tol: f64,
    pub max_iters: usize,
    pub total: usize,
    pub converged: usize,
    pub max_gap: f64,
    pub instances: Vec<InstanceReport>,
    /// Unfiltered runs only: number of (MDP, spec) pairs examined.
    pub trials_searched: Option<usize>,
    pub counterexample: Option<Counterexample>,
}

fn trial(
    label: &str,
    index: usize,
    check: &TabularCheck,
) -> Result<(TabularMdp, LookaheadSpec, super::solvers::HighwayRun)> {
    let mut rng = seed::substream_rng(check.seed, label, index as u64);
    let mdp = random_instance(&mut rng);
    let spec = random_spec(&mdp, check.use_filter_max, check.swap_order, &mut rng);
    let run = highway_value_iteration(&mdp, &spec, check.tol, check.max_iters)?;
    Ok((mdp, spec, run))
}

fn is_counterexample(run: &super::solvers::HighwayRun) -> bool {
    run.settled && run.gap > GAP_THRESHOLD
}

/// Runs highway value iteration on `check.mdps` random instances and compares
/// each against the value-iteration oracle.
pub fn convergence_check(check: &TabularCheck) -> Result<TabularReport> {
    if check.mdps == 0 {
        return Err(validation!("--mdps must be at least 1"));
    }
    if !(check.tol > 0.0) || check.max_iters == 0 {
        return Err(validation!("tolerance and iteration budget must be positive"));
    }
    let runs = (0..check.mdps)
        .into_par_iter()
        .map(|k| trial("instance", k, check))
        .collect::<Result<Vec<_>>>()?;
    let instances: Vec<InstanceReport> = runs
        .iter()
        .enumerate()
        .map(|(index, (mdp, spec, run))| InstanceReport {
            index,
            ns: mdp.ns,
            na: mdp.na,
            policies: spec.policies.len(),
            depths: spec.depths.clone(),
            alpha_policy: spec.alpha_policy,
            alpha_depth: spec.alpha_depth,
            iterations: run.iterations,
            settled: run.settled,
            gap: run.gap,
            converged_to_optimal: run.converged_to_optimal,
        })
        .collect();
    let mut report = TabularReport {
        seed: check.seed,
        use_filter_max: check.use_filter_max,
        swap_order: check.swap_order,
        tol: check.tol,
        max_iters: check.max_iters,
        total: instances.len(),
        converged: instances.iter().filter(|r| r.converged_to_optimal).count(),
        max_gap: instances.iter().map(|r| r.gap).fold(0.0, f64::max),
        instances,
        trials_searched: None,
        counterexample: None,
    };
    if !check.use_filter_max {
        let (trials, found) = counterexample_search(check)?;
        report.trials_searched = Some(trials);
        report.counterexample = found;
    }
    Ok(report)
}

/// Searches up to `check.search_budget` random unfiltered (MDP, spec) pairs for
/// one whose iteration settles on a fixed point more than [`GAP_THRESHOLD`]
/// away from `V*`. Returns the number of pairs examined and the first hit.
pub fn counterexample_search(check: &TabularCheck) -> Result<(usize, Option<Counterexample>)> {
    let unfiltered = TabularCheck { use_filter_max: false, ..check.clone() };
    const CHUNK: usize = 64;
    let mut start = 0;
    while start < check.search_budget {
        let end = (start + CHUNK).min(check.search_budget);
        let runs = (start..end)
            .into_par_iter()
            .map(|k| trial("search", k, &unfiltered))
            .collect::<Result<Vec<_>>>()?;
        if let Some((offset, (mdp, spec, run))) = runs.into_iter().enumerate().find(|(_, (_, _, r))| is_counterexample(r))
        {
            let trial = start + offset;
            return Ok((
                trial + 1,
                Some(Counterexample {
                    trial,
                    mdp,
                    spec,
                    iterations: run.iterations,
                    gap: run.gap,
                    fixed_point: run.values,
                    optimal: run.optimal,
                }),
            ));
        }
        start = end;
    }
    Ok((check.search_budget, None))
}
