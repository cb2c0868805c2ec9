use rayon::prelude::*;

use crate::autodiff::{Graph, ParamStore};
use crate::error::Result;
use crate::maze::MazeTask;
use crate::planner::{plan, BoundParams, Mode, PlannerConfig};
use crate::seed;

/// Shannon entropy (nats) of the empirical distribution given by `counts`.
pub fn entropy_from_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Runs the planner in train mode on each maze and returns the entropy of the
/// latent actions selected across all planning layers, cells and mazes.
pub fn latent_action_entropy(
    params: &ParamStore<f32>,
    config: &PlannerConfig,
    mazes: &[MazeTask],
    seed_value: u64,
) -> Result<f64> {
    let per_maze = mazes
        .par_iter()
        .enumerate()
        .map(|(k, task)| -> Result<Vec<u64>> {
            let mut g = Graph::<f32>::new();
            let bound = BoundParams::bind(&mut g, params, config)?;
            let obs = g.constant(task.maze.observation());
            let out = plan(&mut g, obs, &bound, config, Mode::Train, seed::substream(seed_value, "entropy", k as u64))?;
            Ok(out.action_counts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0u64; config.latent_actions];
    for c in per_maze {
        for (total, x) in counts.iter_mut().zip(c) {
            *total += x;
        }
    }
    Ok(entropy_from_counts(&counts))
}
