use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Mlp, MlpSpec, ParamVector};
use crate::envs::{Action, ActionSpace};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyHead {
    /// Softmax over `n_actions` logits.
    Categorical { n_actions: usize },
    /// Diagonal Gaussian: state-dependent mean, state-independent log-std.
    Gaussian { action_dim: usize },
}

impl PolicyHead {
    pub fn for_space(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(n) => PolicyHead::Categorical { n_actions: n },
            ActionSpace::Box { dim, .. } => PolicyHead::Gaussian { action_dim: dim },
        }
    }

    fn output_dim(&self) -> usize {
        match *self {
            PolicyHead::Categorical { n_actions } => n_actions,
            PolicyHead::Gaussian { action_dim } => action_dim,
        }
    }

    fn extra_params(&self) -> usize {
        match *self {
            PolicyHead::Categorical { .. } => 0,
            PolicyHead::Gaussian { action_dim } => action_dim,
        }
    }
}

/// Stochastic policy `π_φ(a|s)`. The parameter vector is the MLP's
/// parameters followed, for the Gaussian head, by one log-std per action
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    mlp: Mlp,
    head: PolicyHead,
}

impl PolicyNet {
    pub fn new(feature_dim: usize, hidden: &[usize], head: PolicyHead) -> Result<Self> {
        let mlp = Mlp::new(MlpSpec::new(feature_dim, hidden, head.output_dim()))?;
        Ok(Self { mlp, head })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn head(&self) -> PolicyHead {
        self.head
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params() + self.head.extra_params()
    }

    /// Network weights from [`Mlp::init`]; log-stds start at zero.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut p = self.mlp.init(seed);
        p.0.extend(std::iter::repeat_n(0.0, self.head.extra_params()));
        p
    }

    fn split<'a>(&self, params: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                context: "policy parameters",
                expected: self.num_params(),
                got: params.len(),
            });
        }
        Ok(params.split_at(self.mlp.num_params()))
    }

    /// Clamped log standard deviations (Gaussian head only).
    pub fn log_std(&self, params: &[f64]) -> Result<Vec<f64>> {
        let (_, raw) = self.split(params)?;
        Ok(raw.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect())
    }

    /// Log-likelihoods of `actions` at row-major features `feats`.
    pub fn log_probs(&self, params: &[f64], feats: &[f64], actions: &[Action]) -> Result<Vec<f64>> {
        let (net, raw_log_std) = self.split(params)?;
        let batch = actions.len();
        let tape = self.mlp.forward_batch(net, feats, batch)?;
        let out = tape.output();
        let k = self.head.output_dim();
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let row = &out[i * k..(i + 1) * k];
                match (self.head, a) {
                    (PolicyHead::Categorical { .. }, Action::Discrete(idx)) if *idx < k => {
                        Ok(row[*idx] - log_sum_exp(row))
                    }
                    (PolicyHead::Gaussian { .. }, Action::Continuous(v)) if v.len() == k => {
                        Ok(gaussian_log_prob(row, raw_log_std, v))
                    }
                    _ => Err(Error::domain("action does not match the policy head")),
                }
            })
            .collect()
    }

    /// Weighted negative log-likelihood `-(1/B) Σ wᵢ log π(aᵢ|sᵢ)` and its
    /// gradient with respect to the policy parameters.
    pub fn weighted_nll_grad(
        &self,
        params: &[f64],
        feats: &[f64],
        actions: &[Action],
        weights: &[f64],
    ) -> Result<(f64, ParamVector)> {
        let (net, raw_log_std) = self.split(params)?;
        let batch = actions.len();
        if weights.len() != batch {
            return Err(Error::Shape {
                context: "policy weights",
                expected: batch,
                got: weights.len(),
            });
        }
        let tape = self.mlp.forward_batch(net, feats, batch)?;
        let out = tape.output();
        let k = self.head.output_dim();
        let inv_b = 1.0 / batch as f64;
        let mut adjoint = vec![0.0; batch * k];
        let mut log_std_grad = vec![0.0; self.head.extra_params()];
        let mut loss = 0.0;
        for (i, (a, &w)) in actions.iter().zip(weights).enumerate() {
            let row = &out[i * k..(i + 1) * k];
            let adj = &mut adjoint[i * k..(i + 1) * k];
            match (self.head, a) {
                (PolicyHead::Categorical { .. }, Action::Discrete(idx)) if *idx < k => {
                    let lse = log_sum_exp(row);
                    loss -= w * (row[*idx] - lse) * inv_b;
                    for (j, (g, z)) in adj.iter_mut().zip(row).enumerate() {
                        let p = (z - lse).exp();
                        let onehot = if j == *idx { 1.0 } else { 0.0 };
                        *g = -w * (onehot - p) * inv_b;
                    }
                }
                (PolicyHead::Gaussian { .. }, Action::Continuous(v)) if v.len() == k => {
                    loss -= w * gaussian_log_prob(row, raw_log_std, v) * inv_b;
                    for j in 0..k {
                        let ls = raw_log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                        let var = (2.0 * ls).exp();
                        let diff = v[j] - row[j];
                        adj[j] = -w * diff / var * inv_b;
                        if raw_log_std[j] > LOG_STD_MIN && raw_log_std[j] < LOG_STD_MAX {
                            log_std_grad[j] -= w * (diff * diff / var - 1.0) * inv_b;
                        }
                    }
                }
                _ => return Err(Error::domain("action does not match the policy head")),
            }
        }
        let mut grad = self.mlp.backward(net, &tape, &adjoint)?.params;
        grad.0.extend(log_std_grad);
        Ok((loss, grad))
    }

    /// Draws one action per feature row.
    pub fn sample(&self, params: &[f64], feats: &[f64], batch: usize, rng: &mut dyn RngCore) -> Result<Vec<Action>> {
        let (net, raw_log_std) = self.split(params)?;
        let tape = self.mlp.forward_batch(net, feats, batch)?;
        let k = self.head.output_dim();
        Ok(tape
            .output()
            .chunks_exact(k)
            .map(|row| match self.head {
                PolicyHead::Categorical { .. } => {
                    let lse = log_sum_exp(row);
                    let u: f64 = rand::Rng::random(rng);
                    let mut acc = 0.0;
                    let mut pick = k - 1;
                    for (j, z) in row.iter().enumerate() {
                        acc += (z - lse).exp();
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    Action::Discrete(pick)
                }
                PolicyHead::Gaussian { .. } => Action::Continuous(
                    row.iter()
                        .zip(raw_log_std)
                        .map(|(mu, ls)| {
                            let eps: f64 = StandardNormal.sample(rng);
                            mu + ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * eps
                        })
                        .collect(),
                ),
            })
            .collect())
    }

    /// Deterministic action: categorical argmax or Gaussian mean.
    pub fn mode(&self, params: &[f64], feat: &[f64]) -> Result<Action> {
        let (net, _) = self.split(params)?;
        let row = self.mlp.forward(net, feat)?;
        Ok(match self.head {
            PolicyHead::Categorical { .. } => {
                let mut best = 0;
                for (j, z) in row.iter().enumerate() {
                    if *z > row[best] {
                        best = j;
                    }
                }
                Action::Discrete(best)
            }
            PolicyHead::Gaussian { .. } => Action::Continuous(row),
        })
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unsquashed diagonal Gaussian log-density.
fn gaussian_log_prob(mean: &[f64], raw_log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(raw_log_std)
        .zip(a)
        .map(|((mu, ls), x)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (x - mu) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}
