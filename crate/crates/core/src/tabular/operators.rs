use serde::{Deserialize, Serialize};

use super::mdp::TabularMdp;
use crate::error::{structural, validation, Result};

/// `Q(s, a) = Σ_{s′} T(s′|s,a)·[R(s,a,s′) + γ·V(s′)]`, laid out `nS×nA`.
pub fn q_values(v: &[f64], mdp: &TabularMdp) -> Vec<f64> {
    let mut q = vec![0.0; mdp.ns * mdp.na];
    for s in 0..mdp.ns {
        for a in 0..mdp.na {
            let base = mdp.index(s, a, 0);
            let mut acc = 0.0;
            for t in 0..mdp.ns {
                acc += mdp.transition[base + t] * (mdp.reward[base + t] + mdp.gamma * v[t]);
            }
            q[s * mdp.na + a] = acc;
        }
    }
    q
}

pub fn bellman_optimality(v: &[f64], mdp: &TabularMdp) -> Vec<f64> {
    let q = q_values(v, mdp);
    q.chunks(mdp.na).map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// `policy` is `nS×nA`, row-stochastic.
pub fn bellman_expectation(v: &[f64], mdp: &TabularMdp, policy: &[f64]) -> Vec<f64> {
    let q = q_values(v, mdp);
    q.chunks(mdp.na).zip(policy.chunks(mdp.na)).map(|(qs, ps)| qs.iter().zip(ps).map(|(q, p)| q * p).sum()).collect()
}

/// Deterministic policy at the lowest-index maximiser of `Q` under `v`.
pub fn greedy_policy(v: &[f64], mdp: &TabularMdp) -> Vec<f64> {
    let q = q_values(v, mdp);
    let mut pi = vec![0.0; mdp.ns * mdp.na];
    for (s, row) in q.chunks(mdp.na).enumerate() {
        let best = (1..mdp.na).fold(0, |b, a| if row[a] > row[b] { a } else { b });
        pi[s * mdp.na + best] = 1.0;
    }
    pi
}

/// Value-weighted softmax `Σ_x w_x·x` with `w ∝ exp(α·x)`.
pub fn smax(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(structural!("smax over an empty set"));
    }
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut acc) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in values {
        let w = (alpha * (x - top)).exp();
        z += w;
        acc += w * x;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    Ok((acc / z).clamp(lo, hi))
}

/// Lookahead policies, depths and temperatures of the highway operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookaheadSpec {
    /// Each `nS×nA`, row-stochastic.
    pub policies: Vec<Vec<f64>>,
    pub depths: Vec<usize>,
    /// Temperature of the softmax over policies.
    pub alpha_policy: f64,
    /// Temperature of the softmax over depths.
    pub alpha_depth: f64,
    pub use_filter_max: bool,
    /// Take the softmax over policies first and over depths second.
    #[serde(default)]
    pub swap_order: bool,
}

impl LookaheadSpec {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.policies.is_empty() || self.depths.is_empty() {
            return Err(validation!("lookahead spec needs at least one policy and one depth"));
        }
        if self.depths.contains(&0) {
            return Err(validation!("lookahead depths must be positive"));
        }
        if !(self.alpha_policy > 0.0 && self.alpha_depth > 0.0) {
            return Err(validation!("smax temperatures must be positive"));
        }
        for pi in &self.policies {
            if pi.len() != mdp.ns * mdp.na {
                return Err(validation!("policy must have nS·nA = {} entries", mdp.ns * mdp.na));
            }
            for row in pi.chunks(mdp.na) {
                if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(validation!("lookahead policy rows must be distributions"));
                }
            }
        }
        Ok(())
    }
}

/// Candidates `c_{π,n} = (B^π)^{n−1}·B·V`, optionally filtered by
/// `max(c, B·V)`, combined per state by a softmax over depths and then over
/// policies (reversed with `swap_order`).
pub fn highway_operator(v: &[f64], mdp: &TabularMdp, spec: &LookaheadSpec) -> Result<Vec<f64>> {
    spec.validate(mdp)?;
    let bv = bellman_optimality(v, mdp);
    let max_depth = *spec.depths.iter().max().expect("validated nonempty");
    // filtered[π][depth index][s]
    let mut filtered = Vec::with_capacity(spec.policies.len());
    for pi in &spec.policies {
        let mut chain = vec![bv.clone()];
        for _ in 1..max_depth {
            let next = bellman_expectation(chain.last().expect("nonempty"), mdp, pi);
            chain.push(next);
        }
        let per_depth: Vec<Vec<f64>> = spec
            .depths
            .iter()
            .map(|&n| {
                let c = &chain[n - 1];
                if spec.use_filter_max {
                    c.iter().zip(&bv).map(|(c, b)| c.max(*b)).collect()
                } else {
                    c.clone()
                }
            })
            .collect();
        filtered.push(per_depth);
    }
    let (np, nd) = (spec.policies.len(), spec.depths.len());
    let mut out = vec![0.0; mdp.ns];
    for (s, o) in out.iter_mut().enumerate() {
        *o = if spec.swap_order {
            let per_depth = (0..nd)
                .map(|d| smax(&(0..np).map(|p| filtered[p][d][s]).collect::<Vec<_>>(), spec.alpha_policy))
                .collect::<Result<Vec<_>>>()?;
            smax(&per_depth, spec.alpha_depth)?
        } else {
            let per_policy = (0..np)
                .map(|p| smax(&(0..nd).map(|d| filtered[p][d][s]).collect::<Vec<_>>(), spec.alpha_depth))
                .collect::<Result<Vec<_>>>()?;
            smax(&per_policy, spec.alpha_policy)?
        };
    }
    Ok(out)
}
