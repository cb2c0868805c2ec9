use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Finite MDP with dense `nS×nA×nS` transition and reward arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub ns: usize,
    pub na: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(ns: usize, na: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        if ns == 0 || na == 0 {
            return Err(validation!("MDP needs at least one state and one action"));
        }
        let len = ns * na * ns;
        if transition.len() != len || reward.len() != len {
            return Err(validation!("transition and reward must have nS·nA·nS = {} entries", len));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(validation!("discount must lie in [0, 1), got {}", gamma));
        }
        for (row, probs) in transition.chunks(ns).enumerate() {
            let total: f64 = probs.iter().sum();
            if probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(validation!("transition row {} is not a distribution (sum {})", row, total));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(validation!("rewards must be finite"));
        }
        Ok(TabularMdp { ns, na, transition, reward, gamma })
    }

    /// Dirichlet(1) transition rows and rewards uniform in `[−1, 1]`.
    pub fn random<R: Rng>(ns: usize, na: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut transition = Vec::with_capacity(ns * na * ns);
        for _ in 0..ns * na {
            transition.extend(dirichlet_row(ns, rng));
        }
        let reward = (0..ns * na * ns).map(|_| rng.random_range(-1.0..=1.0)).collect();
        TabularMdp::new(ns, na, transition, reward, gamma)
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize, t: usize) -> usize {
        (s * self.na + a) * self.ns + t
    }
}

/// One Dirichlet(1, …, 1) draw via normalised unit exponentials.
pub(crate) fn dirichlet_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}
