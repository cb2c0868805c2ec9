//! Latent planning layers: the VI layer (max over latent actions), the VE
//! layer (expectation under a sampled embedded policy) and the highway block
//! that stacks them behind filter and aggregate gates.

use rand::Rng;

use super::config::Mode;
use super::params::BoundParams;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{structural, validation, Result};
use crate::seed;

/// Learned latent MDP: reward map `R̄` (`m×m`) and transition kernels `T̄`
/// (`|Ā|×1×k×k`), optionally with a separate kernel bank for the reward term.
#[derive(Clone, Copy, Debug)]
pub struct LatentMdp {
    pub reward: Var,
    pub transition: Var,
    pub transition_reward: Option<Var>,
    pub actions: usize,
    pub padding: usize,
}

impl LatentMdp {
    pub fn new<F: Scalar>(graph: &Graph<F>, reward: Var, transition: Var, transition_reward: Option<Var>) -> Result<Self> {
        let shape = graph.value(transition).shape();
        let [actions, 1, k, k2] = *shape else {
            return Err(structural!("transition kernels must be A×1×k×k, got {:?}", shape));
        };
        if k != k2 || k % 2 == 0 {
            return Err(validation!("transition kernel must be square with odd side, got {}×{}", k, k2));
        }
        if graph.value(reward).shape().len() != 2 {
            return Err(structural!("reward map must be m×m, got {:?}", graph.value(reward).shape()));
        }
        if !graph.value(reward).all_finite() {
            return Err(validation!("reward map contains non-finite values"));
        }
        Ok(LatentMdp { reward, transition, transition_reward, actions, padding: (k - 1) / 2 })
    }
}

/// Observation-to-reward map: a 3×3 convolution to `hidden` channels with a
/// rectifier, then a bias-free 1×1 convolution down to one channel.
pub fn map_observation<F: Scalar>(graph: &mut Graph<F>, obs: Var, params: &BoundParams) -> Result<Var> {
    let shape = graph.value(obs).shape().to_vec();
    let [2, m, m2] = shape[..] else {
        return Err(structural!("observation must be 2×m×m, got {:?}", shape));
    };
    if m != m2 {
        return Err(structural!("observation must be square, got {}×{}", m, m2));
    }
    if graph.value(obs).data()[..m * m].iter().any(|&v| v != F::zero() && v != F::one()) {
        return Err(validation!("obstacle channel must be binary"));
    }
    let h = graph.conv2d(obs, params.reward_hidden, 1)?;
    let h = graph.channel_bias(h, params.reward_hidden_bias)?;
    let h = graph.relu(h)?;
    let r = graph.conv2d(h, params.reward_out, 0)?;
    graph.reshape(r, vec![m, m])
}

/// Latent backup `Q̄ = T̄ ⋆ (R̄ + V̄)` as a single zero-padded convolution (or
/// `T̄_R ⋆ R̄ + T̄ ⋆ V̄` with a separate reward kernel).
pub fn latent_q<F: Scalar>(graph: &mut Graph<F>, value: Var, mdp: &LatentMdp) -> Result<Var> {
    match mdp.transition_reward {
        None => {
            let x = graph.add(mdp.reward, value)?;
            graph.conv2d(x, mdp.transition, mdp.padding)
        }
        Some(tr) => {
            let qr = graph.conv2d(mdp.reward, tr, mdp.padding)?;
            let qv = graph.conv2d(value, mdp.transition, mdp.padding)?;
            graph.add(qr, qv)
        }
    }
}

pub struct ViOutput {
    pub q: Var,
    pub value: Var,
}

/// One VI layer: latent backup followed by a max over latent actions.
pub fn vi_layer<F: Scalar>(graph: &mut Graph<F>, value: Var, mdp: &LatentMdp) -> Result<ViOutput> {
    let q = latent_q(graph, value, mdp)?;
    let value = graph.max_over_axis(q, 0)?;
    Ok(ViOutput { q, value })
}

/// Samples a one-hot embedded policy from `q` (`|Ā|×m×m`). In train mode each
/// cell draws from the ε-greedy distribution (`1−ε+ε/|Ā|` on the argmax,
/// `ε/|Ā|` elsewhere); in eval mode it is the argmax. Ties go to the lowest
/// index. Returns the policy and the chosen action per cell.
pub fn embedded_policy<F: Scalar, R: Rng>(
    q: &Tensor<F>,
    epsilon: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<F>, Vec<u32>)> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(validation!("epsilon must lie in [0, 1], got {}", epsilon));
    }
    let shape = q.shape();
    if shape.len() != 3 || shape[0] == 0 {
        return Err(structural!("latent Q must be A×m×m, got {:?}", shape));
    }
    let a_count = shape[0];
    let n = q.len() / a_count;
    let data = q.data();
    let mut policy = Tensor::zeros(shape.to_vec());
    let mut actions = Vec::with_capacity(n);
    for p in 0..n {
        let mut best = 0usize;
        for a in 1..a_count {
            if data[a * n + p] > data[best * n + p] {
                best = a;
            }
        }
        let chosen = match mode {
            Mode::Eval => best,
            Mode::Train => {
                if rng.random::<f64>() < epsilon {
                    rng.random_range(0..a_count)
                } else {
                    best
                }
            }
        };
        policy.data_mut()[chosen * n + p] = F::one();
        actions.push(chosen as u32);
    }
    Ok((policy, actions))
}

pub struct VeOutput {
    pub q: Var,
    pub actions: Vec<u32>,
    pub value: Var,
}

/// One VE layer: latent backup, embedded policy, expectation of `Q` under it.
/// The sampled policy is a constant of the graph.
pub fn ve_layer<F: Scalar, R: Rng>(
    graph: &mut Graph<F>,
    value: Var,
    mdp: &LatentMdp,
    epsilon: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<VeOutput> {
    let q = latent_q(graph, value, mdp)?;
    let (policy, actions) = embedded_policy(graph.value(q), epsilon, mode, rng)?;
    graph.record_decision(actions.clone());
    let value = graph.expectation_over_axis(q, &policy)?;
    Ok(VeOutput { q, actions, value })
}

/// Structural switches of a highway block.
#[derive(Clone, Copy, Debug)]
pub struct BlockSpec {
    pub depth: usize,
    pub paths: usize,
    pub epsilon: f64,
    pub filter_gate: bool,
    pub value_exploration: bool,
}

pub struct BlockOutput {
    pub output: Var,
    /// `V̄⁽ⁿ⁺¹⁾`, the block's VI-layer value.
    pub vi_value: Var,
    /// Gated candidates `V′` indexed `[path][depth]`.
    pub candidates: Vec<Vec<Var>>,
    /// Per-path inner aggregates `V″`.
    pub path_values: Vec<Var>,
}

/// Highway block: a VI layer, `paths` parallel stacks of `depth−1` VE layers,
/// the filter gate against the VI output, a value-softmax over depths with
/// `alpha_depth`, then a value-softmax over paths with `alpha_path`.
///
/// Path `p` draws its embedded policies from `substream(seed, "path", p)`.
#[allow(clippy::too_many_arguments)]
pub fn highway_block<F: Scalar>(
    graph: &mut Graph<F>,
    value: Var,
    mdp: &LatentMdp,
    spec: &BlockSpec,
    alpha_depth: Var,
    alpha_path: Var,
    mode: Mode,
    seed: u64,
    counts: &mut [u64],
) -> Result<BlockOutput> {
    if spec.depth == 0 || spec.paths == 0 {
        return Err(validation!("highway block needs depth ≥ 1 and paths ≥ 1"));
    }
    let vi = vi_layer(graph, value, mdp)?;
    count_argmax(graph, vi.value, counts);
    let vi_value = vi.value;
    let mut candidates = Vec::with_capacity(spec.paths);
    let mut path_values = Vec::with_capacity(spec.paths);
    for path in 0..spec.paths {
        let mut rng = seed::substream_rng(seed, "path", path as u64);
        let mut current = vi_value;
        let mut gated = Vec::with_capacity(spec.depth);
        for d in 0..spec.depth {
            if d > 0 {
                current = if spec.value_exploration {
                    let ve = ve_layer(graph, current, mdp, spec.epsilon, mode, &mut rng)?;
                    for &a in &ve.actions {
                        counts[a as usize] += 1;
                    }
                    ve.value
                } else {
                    let vi = vi_layer(graph, current, mdp)?;
                    count_argmax(graph, vi.value, counts);
                    vi.value
                };
            }
            let candidate = if spec.filter_gate { graph.elementwise_max(current, vi_value)? } else { current };
            gated.push(candidate);
        }
        path_values.push(graph.softmax_weighted_sum(&gated, alpha_depth)?);
        candidates.push(gated);
    }
    let output = graph.softmax_weighted_sum(&path_values, alpha_path)?;
    Ok(BlockOutput { output, vi_value, candidates, path_values })
}

pub(crate) fn count_argmax<F: Scalar>(graph: &Graph<F>, max_node: Var, counts: &mut [u64]) {
    if let Some(arg) = graph.argmax(max_node) {
        for &a in arg {
            counts[a as usize] += 1;
        }
    }
}
