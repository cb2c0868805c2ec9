use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Scalar;
use crate::error::{structural, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig { learning_rate: 1e-3, decay: 0.99, eps: 1e-8 }
    }
}

/// RMSprop: `s ← ρ·s + (1−ρ)·g²`, `p ← p − η·g/(√s + ε)`.
#[derive(Clone, Debug)]
pub struct Rmsprop<F> {
    pub config: RmspropConfig,
    square_avg: ParamStore<F>,
}

impl<F: Scalar> Rmsprop<F> {
    pub fn new(config: RmspropConfig, params: &ParamStore<F>) -> Self {
        Rmsprop { config, square_avg: params.zeros_like() }
    }

    pub fn square_avg(&self) -> &ParamStore<F> {
        &self.square_avg
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &ParamStore<F>) -> Result<()> {
        for (name, g) in grads.iter() {
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in `{}` at element {} ({:?})",
                    name,
                    i,
                    g.data()[i]
                )));
            }
        }
        if params.len() != grads.len() || params.len() != self.square_avg.len() {
            return Err(structural!("rmsprop: parameter, gradient and state sets differ"));
        }
        let rho = F::from_f64_lossy(self.config.decay);
        let one_minus = F::from_f64_lossy(1.0 - self.config.decay);
        let lr = F::from_f64_lossy(self.config.learning_rate);
        let eps = F::from_f64_lossy(self.config.eps);
        for (((name, p), (gname, g)), (_, s)) in
            params.iter_mut().zip(grads.iter()).zip(self.square_avg.iter_mut())
        {
            if name != gname || p.shape() != g.shape() || p.shape() != s.shape() {
                return Err(structural!("rmsprop: `{}` does not line up with gradient `{}`", name, gname));
            }
            for ((pv, &gv), sv) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut().iter_mut()) {
                *sv = rho * *sv + one_minus * gv * gv;
                *pv -= lr * gv / (sv.sqrt() + eps);
            }
        }
        Ok(())
    }
}
