//! Explicit finite MDPs: Bellman operators, the softmax-combined multi-step
//! highway operator, solvers, and randomized convergence harnesses.

mod harness;
mod mdp;
mod operators;
mod solvers;

pub use harness::{
    convergence_check, counterexample_search, random_instance, random_spec, Counterexample, InstanceReport,
    TabularCheck, TabularReport, GAP_THRESHOLD,
};
pub use mdp::TabularMdp;
pub use operators::{
    bellman_expectation, bellman_optimality, greedy_policy, highway_operator, q_values, smax, LookaheadSpec,
};
pub use solvers::{highway_value_iteration, stop_threshold, value_iteration, HighwayRun, VALUE_ITERATION_BUDGET};
