use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Planner family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `N` stacked VI layers.
    Vin,
    /// `N_B` groups of `N_b` VI layers, each group aggregated by value softmax.
    Skip,
    /// `N_B` highway blocks.
    Highway,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vin => "vin",
            Variant::Skip => "skip",
            Variant::Highway => "highway",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vin" => Ok(Variant::Vin),
            "skip" => Ok(Variant::Skip),
            "highway" => Ok(Variant::Highway),
            other => Err(validation!("unknown planner variant `{}` (expected vin, skip or highway)", other)),
        }
    }
}

/// Whether embedded policies are sampled (train) or greedy (eval).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub variant: Variant,
    /// Total VI layer count for the `vin` variant.
    pub depth: usize,
    /// Number of highway blocks / skip groups (`N_B`).
    pub blocks: usize,
    /// Layers per block (`N_b`).
    pub block_depth: usize,
    /// Parallel VE paths per highway block (`N_p`).
    pub parallel_paths: usize,
    /// Embedded exploration rate.
    pub epsilon: f64,
    pub kernel_size: usize,
    pub latent_actions: usize,
    /// Hidden channels of the observation-to-reward map.
    pub hidden_dim: usize,
    /// Initial temperature of the aggregate gate over depths (`α_A`).
    pub alpha_depth_init: f64,
    /// Initial temperature of the aggregate gate over parallel paths (`α_Ã`).
    pub alpha_path_init: f64,
    /// Use a second kernel bank for the reward term of the latent backup.
    pub separate_reward_kernel: bool,
    /// Elementwise max against the block's VI output before aggregation.
    pub filter_gate: bool,
    /// When false, VE layers are replaced with VI layers.
    pub value_exploration: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            variant: Variant::Vin,
            depth: 20,
            blocks: 20,
            block_depth: 2,
            parallel_paths: 1,
            epsilon: 1.0,
            kernel_size: 5,
            latent_actions: 32,
            hidden_dim: 150,
            alpha_depth_init: 1.0,
            alpha_path_init: 1.0,
            separate_reward_kernel: false,
            filter_gate: true,
            value_exploration: true,
        }
    }
}

impl PlannerConfig {
    pub fn vin(depth: usize) -> Self {
        PlannerConfig { variant: Variant::Vin, depth, ..Default::default() }
    }

    pub fn skip(blocks: usize, block_depth: usize) -> Self {
        PlannerConfig { variant: Variant::Skip, blocks, block_depth, ..Default::default() }
    }

    pub fn highway(blocks: usize, block_depth: usize, parallel_paths: usize, epsilon: f64) -> Self {
        PlannerConfig {
            variant: Variant::Highway,
            blocks,
            block_depth,
            parallel_paths,
            epsilon,
            ..Default::default()
        }
    }

    /// Number of latent planning layers (`N`).
    pub fn total_depth(&self) -> usize {
        match self.variant {
            Variant::Vin => self.depth,
            Variant::Skip | Variant::Highway => self.blocks * self.block_depth,
        }
    }

    /// `(N_B, N_b)` as reported in metrics; a plain VIN counts as `N` blocks of one layer.
    pub fn block_layout(&self) -> (usize, usize) {
        match self.variant {
            Variant::Vin => (self.depth, 1),
            Variant::Skip | Variant::Highway => (self.blocks, self.block_depth),
        }
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(validation!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.latent_actions == 0 {
            return Err(validation!("latent_actions must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(validation!("hidden_dim must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(validation!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        match self.variant {
            Variant::Vin => {
                if self.depth == 0 {
                    return Err(validation!("vin depth must be at least 1"));
                }
            }
            Variant::Skip | Variant::Highway => {
                if self.blocks == 0 || self.block_depth == 0 {
                    return Err(validation!("blocks and block_depth must be at least 1"));
                }
                if self.parallel_paths == 0 {
                    return Err(validation!("parallel_paths must be at least 1"));
                }
            }
        }
        if !self.alpha_depth_init.is_finite() || !self.alpha_path_init.is_finite() {
            return Err(validation!("temperature initializations must be finite"));
        }
        Ok(())
    }
}
