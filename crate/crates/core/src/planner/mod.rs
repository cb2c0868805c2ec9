//! Latent planning modules and the stacked planner variants built from them.

mod config;
mod layers;
mod model;
mod params;

pub use config::{Mode, PlannerConfig, Variant};
pub use layers::{
    embedded_policy, highway_block, latent_q, map_observation, ve_layer, vi_layer, BlockOutput, BlockSpec, LatentMdp,
    VeOutput, ViOutput,
};
pub use model::{plan, PlanOutput};
pub use params::{
    alpha_depth_name, alpha_path_name, init_params, BoundParams, HEAD_BIAS, HEAD_WEIGHT, MOVES, ORIENTATIONS,
    REWARD_HIDDEN, REWARD_HIDDEN_BIAS, REWARD_OUT, TRANSITION, TRANSITION_REWARD,
};

#[cfg(test)]
mod tests;
