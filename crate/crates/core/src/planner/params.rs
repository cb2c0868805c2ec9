use super::config::{PlannerConfig, Variant};
use crate::autodiff::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::Result;
use crate::seed;

/// Number of agent orientations and real actions seen by the read-out head.
pub const ORIENTATIONS: usize = 4;
pub const MOVES: usize = 3;

pub const REWARD_HIDDEN: &str = "reward.hidden.weight";
pub const REWARD_HIDDEN_BIAS: &str = "reward.hidden.bias";
pub const REWARD_OUT: &str = "reward.out.weight";
pub const TRANSITION: &str = "transition";
pub const TRANSITION_REWARD: &str = "transition.reward";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

pub fn alpha_depth_name(block: usize) -> String {
    format!("block{block}.alpha_depth")
}

pub fn alpha_path_name(block: usize) -> String {
    format!("block{block}.alpha_path")
}

/// Initial parameters. Weights and biases are drawn from `U(±1/√fan_in)`;
/// aggregate-gate temperatures start at the configured values.
pub fn init_params<F: Scalar>(config: &PlannerConfig, seed: u64) -> ParamStore<F> {
    let mut rng = seed::substream_rng(seed, "init", 0);
    let (h, a, k) = (config.hidden_dim, config.latent_actions, config.kernel_size);
    let mut p = ParamStore::new();
    let b1 = 1.0 / (18.0f64).sqrt();
    p.insert(REWARD_HIDDEN, Tensor::uniform(vec![h, 2, 3, 3], b1, &mut rng));
    p.insert(REWARD_HIDDEN_BIAS, Tensor::uniform(vec![h], b1, &mut rng));
    p.insert(REWARD_OUT, Tensor::uniform(vec![1, h, 1, 1], 1.0 / (h as f64).sqrt(), &mut rng));
    let bt = 1.0 / (k as f64);
    p.insert(TRANSITION, Tensor::uniform(vec![a, 1, k, k], bt, &mut rng));
    if config.separate_reward_kernel {
        p.insert(TRANSITION_REWARD, Tensor::uniform(vec![a, 1, k, k], bt, &mut rng));
    }
    match config.variant {
        Variant::Vin => {}
        Variant::Skip => {
            for b in 0..config.blocks {
                p.insert(alpha_depth_name(b), Tensor::scalar(F::from_f64_lossy(config.alpha_depth_init)));
            }
        }
        Variant::Highway => {
            for b in 0..config.blocks {
                p.insert(alpha_depth_name(b), Tensor::scalar(F::from_f64_lossy(config.alpha_depth_init)));
                p.insert(alpha_path_name(b), Tensor::scalar(F::from_f64_lossy(config.alpha_path_init)));
            }
        }
    }
    let bh = 1.0 / (a as f64).sqrt();
    p.insert(HEAD_WEIGHT, Tensor::uniform(vec![ORIENTATIONS, MOVES, a], bh, &mut rng));
    p.insert(HEAD_BIAS, Tensor::uniform(vec![ORIENTATIONS, MOVES], bh, &mut rng));
    p
}

/// Parameters registered as leaves of one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub reward_hidden: Var,
    pub reward_hidden_bias: Var,
    pub reward_out: Var,
    pub transition: Var,
    pub transition_reward: Option<Var>,
    pub alpha_depth: Vec<Var>,
    pub alpha_path: Vec<Var>,
    pub head_weight: Var,
    pub head_bias: Var,
    /// `(name, var)` for every registered parameter, in store order.
    pub vars: Vec<(String, Var)>,
}

impl BoundParams {
    pub fn bind<F: Scalar>(graph: &mut Graph<F>, params: &ParamStore<F>, config: &PlannerConfig) -> Result<Self> {
        let mut vars = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            vars.push((name.to_string(), graph.parameter(t.clone())));
        }
        let find = |name: &str| -> Result<Var> {
            vars.iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| crate::error::structural!("missing parameter `{}`", name))
        };
        let blocks = match config.variant {
            Variant::Vin => 0,
            _ => config.blocks,
        };
        let alpha_depth = (0..blocks).map(|b| find(&alpha_depth_name(b))).collect::<Result<Vec<_>>>()?;
        let alpha_path = match config.variant {
            Variant::Highway => (0..blocks).map(|b| find(&alpha_path_name(b))).collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Ok(BoundParams {
            reward_hidden: find(REWARD_HIDDEN)?,
            reward_hidden_bias: find(REWARD_HIDDEN_BIAS)?,
            reward_out: find(REWARD_OUT)?,
            transition: find(TRANSITION)?,
            transition_reward: if config.separate_reward_kernel { Some(find(TRANSITION_REWARD)?) } else { None },
            alpha_depth,
            alpha_path,
            head_weight: find(HEAD_WEIGHT)?,
            head_bias: find(HEAD_BIAS)?,
            vars,
        })
    }

    /// Collects leaf gradients after `backward`; parameters the loss did not
    /// reach get zeros.
    pub fn gradients<F: Scalar>(&self, graph: &Graph<F>) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for (name, v) in &self.vars {
            let shape = graph.value(*v).shape().to_vec();
            let t = match graph.grad(*v) {
                Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape matches parameter"),
                None => Tensor::zeros(shape),
            };
            out.insert(name.clone(), t);
        }
        out
    }
}
