use super::config::{Mode, PlannerConfig, Variant};
use super::layers::{count_argmax, highway_block, latent_q, map_observation, vi_layer, BlockSpec, LatentMdp};
use super::params::BoundParams;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{structural, Result};
use crate::seed;

/// Graph handles produced by one planner forward pass.
#[derive(Clone, Debug)]
pub struct PlanOutput {
    pub reward: Var,
    /// Final latent value map `V̄` (`m×m`).
    pub value: Var,
    /// Latent action values fed to the read-out head (`|Ā|×m×m`).
    pub q_final: Var,
    /// Per-(orientation, cell) action logits, `4×m×m×3`.
    pub logits: Var,
    /// How often each latent action was selected across all planning layers
    /// (argmax slots of VI layers, sampled slots of VE layers).
    pub action_counts: Vec<u64>,
}

/// Runs the planner on a `2×m×m` observation already placed in `graph`.
///
/// `seed` only matters for highway blocks in train mode; block `b` draws from
/// `substream(seed, "block", b)`.
pub fn plan<F: Scalar>(
    graph: &mut Graph<F>,
    obs: Var,
    params: &BoundParams,
    config: &PlannerConfig,
    mode: Mode,
    seed: u64,
) -> Result<PlanOutput> {
    config.validate()?;
    let reward = map_observation(graph, obs, params)?;
    let mdp = LatentMdp::new(graph, reward, params.transition, params.transition_reward)?;
    if mdp.actions != config.latent_actions {
        return Err(structural!(
            "transition has {} latent actions but the config expects {}",
            mdp.actions,
            config.latent_actions
        ));
    }
    let m = graph.value(reward).shape()[0];
    let mut counts = vec![0u64; mdp.actions];
    let mut value = graph.constant(Tensor::zeros(vec![m, m]));

    match config.variant {
        Variant::Vin => {
            for _ in 0..config.depth {
                value = vi_layer(graph, value, &mdp)?.value;
                count_argmax(graph, value, &mut counts);
            }
        }
        Variant::Skip => {
            for b in 0..config.blocks {
                let mut group = Vec::with_capacity(config.block_depth);
                for _ in 0..config.block_depth {
                    value = vi_layer(graph, value, &mdp)?.value;
                    count_argmax(graph, value, &mut counts);
                    group.push(value);
                }
                value = graph.softmax_weighted_sum(&group, params.alpha_depth[b])?;
            }
        }
        Variant::Highway => {
            let spec = BlockSpec {
                depth: config.block_depth,
                paths: config.parallel_paths,
                epsilon: config.epsilon,
                filter_gate: config.filter_gate,
                value_exploration: config.value_exploration,
            };
            for b in 0..config.blocks {
                let block_seed = seed::substream(seed, "block", b as u64);
                value = highway_block(
                    graph,
                    value,
                    &mdp,
                    &spec,
                    params.alpha_depth[b],
                    params.alpha_path[b],
                    mode,
                    block_seed,
                    &mut counts,
                )?
                .output;
            }
        }
    }

    let q_final = latent_q(graph, value, &mdp)?;
    let logits = graph.orientation_head(q_final, params.head_weight, params.head_bias)?;
    Ok(PlanOutput { reward, value, q_final, logits, action_counts: counts })
}
