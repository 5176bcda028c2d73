//! Full update steps: QQL (values, then Q, then policy, then target
//! tracking), the XQL baseline and behavior cloning.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Transition;
use crate::envs::{Action, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::gumbel::quantile_levels;
use crate::losses::{
    bellman_target, beta_from_values, qql_awr_weight, qql_value_terms, xql_awr_weight,
    xql_value_loss, xql_value_loss_grad_v, PolicyWeightsConfig, ValueLossLevels, ValuePairReadout,
};
use crate::nnet::{soft_update, Mlp, MlpSpec, OptimizerState, ParamVector, PolicyHead, PolicyNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Qql,
    Xql,
    Bc,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Qql => "qql",
            Algo::Xql => "xql",
            Algo::Bc => "bc",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qql" => Ok(Algo::Qql),
            "xql" => Ok(Algo::Xql),
            "bc" => Ok(Algo::Bc),
            other => Err(Error::Unsupported(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Hyperparameters of a run. Defaults follow the published QQL settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub lr_v: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    /// Mild-generalization coefficient `λ`.
    pub lambda: f64,
    /// Policy constraint weight `ζ`.
    pub zeta: f64,
    pub beta_low: f64,
    pub weight_cap: f64,
    /// Fixed Gumbel temperature, XQL only.
    pub beta: Option<f64>,
    pub steps: u64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            lr_v: 3e-4,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            lambda: 1.0,
            zeta: 1.0,
            beta_low: 0.1,
            weight_cap: 100.0,
            beta: None,
            steps: 1_000_000,
            seed: 0,
            hidden_dims: vec![256, 256],
            eval_interval: 1000,
            eval_episodes: 10,
            log_interval: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::domain(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, lr) in [("lr_v", self.lr_v), ("lr_q", self.lr_q), ("lr_pi", self.lr_pi)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        self.policy_weights().validate()?;
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return bad(format!("beta must be positive, got {beta}"));
            }
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.log_interval == 0 {
            return bad("eval_interval, eval_episodes and log_interval must be >= 1".into());
        }
        Ok(())
    }

    pub fn policy_weights(&self) -> PolicyWeightsConfig {
        PolicyWeightsConfig {
            zeta: self.zeta,
            beta_low: self.beta_low,
            weight_cap: self.weight_cap,
        }
    }
}

/// Switches for the two QQL ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// The `λ`-weighted policy-action term in the value losses.
    pub value_regularization: bool,
    /// Lower quantile levels on the policy-action term.
    pub conservative_estimation: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            value_regularization: true,
            conservative_estimation: true,
        }
    }
}

/// Shapes shared by every network of an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub env: EnvSpec,
    pub feature_dim: usize,
    /// Width of the action encoding fed to the critics.
    pub action_dim: usize,
    pub head: PolicyHead,
    pub hidden_dims: Vec<usize>,
}

/// Network layouts built from an [`AgentSpec`].
#[derive(Debug, Clone)]
pub struct Networks {
    pub q: Mlp,
    pub v: Mlp,
    pub pi: PolicyNet,
}

impl AgentSpec {
    pub fn for_env(env: &Env, hidden_dims: &[usize]) -> Self {
        let space = env.action_space();
        Self {
            env: env.spec(),
            feature_dim: env.feature_dim(),
            action_dim: space.feature_dim(),
            head: PolicyHead::for_space(space),
            hidden_dims: hidden_dims.to_vec(),
        }
    }

    pub fn networks(&self) -> Result<Networks> {
        Ok(Networks {
            q: Mlp::new(MlpSpec::new(self.feature_dim + self.action_dim, &self.hidden_dims, 1))?,
            v: Mlp::new(MlpSpec::new(self.feature_dim, &self.hidden_dims, 1))?,
            pi: PolicyNet::new(self.feature_dim, &self.hidden_dims, self.head)?,
        })
    }
}

/// Every parameter and optimizer moment of an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub spec: AgentSpec,
    pub q1: ParamVector,
    pub q2: ParamVector,
    pub q1_target: ParamVector,
    pub q2_target: ParamVector,
    pub v1: ParamVector,
    pub v2: ParamVector,
    pub pi: ParamVector,
    pub opt_q1: OptimizerState,
    pub opt_q2: OptimizerState,
    pub opt_v1: OptimizerState,
    pub opt_v2: OptimizerState,
    pub opt_pi: OptimizerState,
    pub step: u64,
}

impl AgentState {
    /// Fresh networks; one seed per network is drawn from `init_rng`.
    pub fn new(spec: AgentSpec, cfg: &TrainConfig, init_rng: &mut dyn RngCore) -> Result<Self> {
        let nets = spec.networks()?;
        let q1 = nets.q.init(init_rng.next_u64());
        let q2 = nets.q.init(init_rng.next_u64());
        let v1 = nets.v.init(init_rng.next_u64());
        let v2 = nets.v.init(init_rng.next_u64());
        let pi = nets.pi.init(init_rng.next_u64());
        Ok(Self {
            opt_q1: OptimizerState::new(q1.len(), cfg.lr_q),
            opt_q2: OptimizerState::new(q2.len(), cfg.lr_q),
            opt_v1: OptimizerState::new(v1.len(), cfg.lr_v),
            opt_v2: OptimizerState::new(v2.len(), cfg.lr_v),
            opt_pi: OptimizerState::new(pi.len(), cfg.lr_pi),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            spec,
            q1,
            q2,
            v1,
            v2,
            pi,
            step: 0,
        })
    }

    pub fn networks(&self) -> Result<Networks> {
        self.spec.networks()
    }

    fn named_params(&self) -> [(&'static str, &ParamVector); 7] {
        [
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
            ("v1", &self.v1),
            ("v2", &self.v2),
            ("pi", &self.pi),
        ]
    }

    /// Checks shapes against the spec and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let nets = self.networks()?;
        let expected = [
            nets.q.num_params(),
            nets.q.num_params(),
            nets.q.num_params(),
            nets.q.num_params(),
            nets.v.num_params(),
            nets.v.num_params(),
            nets.pi.num_params(),
        ];
        for ((name, p), n) in self.named_params().into_iter().zip(expected) {
            if p.len() != n {
                return Err(Error::Schema(format!(
                    "parameter '{name}' has {} entries, expected {n}",
                    p.len()
                )));
            }
            if !p.all_finite() {
                return Err(Error::Schema(format!("parameter '{name}' is not finite")));
            }
        }
        Ok(())
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        self.named_params()
            .into_iter()
            .find(|(_, p)| !p.all_finite())
            .map(|(n, _)| n)
    }

    /// `min(Q1, Q2)` of the online heads at one state-action pair.
    pub fn q_value(&self, env: &Env, obs: &[f64], action: &Action) -> Result<f64> {
        let nets = self.networks()?;
        let mut input = Vec::with_capacity(self.spec.feature_dim + self.spec.action_dim);
        env.features(obs, &mut input);
        env.action_space().encode(action, &mut input)?;
        let a = nets.q.forward(&self.q1, &input)?[0];
        let b = nets.q.forward(&self.q2, &input)?[0];
        Ok(a.min(b))
    }

    /// `(V_ψ1(s), V̂_ψ2(s))` at one state.
    pub fn values(&self, env: &Env, obs: &[f64]) -> Result<ValuePairReadout> {
        let nets = self.networks()?;
        let mut feat = Vec::with_capacity(self.spec.feature_dim);
        env.features(obs, &mut feat);
        Ok(ValuePairReadout::new(
            nets.v.forward(&self.v1, &feat)?[0],
            nets.v.forward(&self.v2, &feat)?[0],
        ))
    }
}

/// A minibatch with features and action encodings precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub env: EnvSpec,
    pub size: usize,
    pub feats: Vec<f64>,
    pub next_feats: Vec<f64>,
    pub actions: Vec<Action>,
    pub action_enc: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn new(env: &Env, transitions: &[&Transition]) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let n = transitions.len();
        let space = env.action_space();
        let mut b = Batch {
            env: env.spec(),
            size: n,
            feats: Vec::with_capacity(n * env.feature_dim()),
            next_feats: Vec::with_capacity(n * env.feature_dim()),
            actions: Vec::with_capacity(n),
            action_enc: Vec::with_capacity(n * space.feature_dim()),
            rewards: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
        };
        for t in transitions {
            env.features(&t.s, &mut b.feats);
            env.features(&t.s_next, &mut b.next_feats);
            space.encode(&t.a, &mut b.action_enc)?;
            b.actions.push(t.a.clone());
            b.rewards.push(t.r);
            b.terminals.push(t.terminal);
        }
        Ok(b)
    }
}

/// Per-step diagnostics. Entries that an algorithm does not produce are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_v1: f64,
    pub loss_v2: f64,
    pub loss_q: f64,
    pub loss_pi: f64,
    /// Mean raw `(V̂ - V)/ω` over the batch (the fixed `β` for XQL).
    pub beta_mean: f64,
    pub weight_mean: f64,
    /// Mean of the online twin-minimum `Q(s, a)` on the batch.
    pub q_mean: f64,
    pub v1_mean: f64,
    pub v2_mean: f64,
    pub grad_norm_v1: f64,
    pub grad_norm_v2: f64,
    pub grad_norm_q: f64,
    pub grad_norm_pi: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,loss_v1,loss_v2,loss_q,loss_pi,beta_mean,weight_mean,q_mean,v1_mean,v2_mean,grad_norm_v1,grad_norm_v2,grad_norm_q,grad_norm_pi";

    fn empty(step: u64) -> Self {
        Self {
            step,
            loss_v1: f64::NAN,
            loss_v2: f64::NAN,
            loss_q: f64::NAN,
            loss_pi: f64::NAN,
            beta_mean: f64::NAN,
            weight_mean: f64::NAN,
            q_mean: f64::NAN,
            v1_mean: f64::NAN,
            v2_mean: f64::NAN,
            grad_norm_v1: f64::NAN,
            grad_norm_v2: f64::NAN,
            grad_norm_q: f64::NAN,
            grad_norm_pi: f64::NAN,
        }
    }

    pub fn values(&self) -> [f64; 13] {
        [
            self.loss_v1,
            self.loss_v2,
            self.loss_q,
            self.loss_pi,
            self.beta_mean,
            self.weight_mean,
            self.q_mean,
            self.v1_mean,
            self.v2_mean,
            self.grad_norm_v1,
            self.grad_norm_v2,
            self.grad_norm_q,
            self.grad_norm_pi,
        ]
    }

    /// One CSV row; reals use the shortest representation that round-trips.
    pub fn csv_row(&self) -> String {
        let mut row = self.step.to_string();
        for v in self.values() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_batch(state: &AgentState, batch: &Batch) -> Result<()> {
    if batch.env != state.spec.env {
        return Err(Error::Precondition(format!(
            "batch from {:?} given to an agent for {:?}",
            batch.env, state.spec.env
        )));
    }
    let (f, a, n) = (state.spec.feature_dim, state.spec.action_dim, batch.size);
    if batch.feats.len() != n * f || batch.next_feats.len() != n * f || batch.action_enc.len() != n * a {
        return Err(Error::Shape {
            context: "batch features",
            expected: n * f,
            got: batch.feats.len(),
        });
    }
    Ok(())
}

/// Row-wise `[features | action encoding]`.
fn critic_inputs(feats: &[f64], f: usize, actions: &[f64], a: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (f + a));
    for i in 0..n {
        out.extend_from_slice(&feats[i * f..(i + 1) * f]);
        out.extend_from_slice(&actions[i * a..(i + 1) * a]);
    }
    out
}

fn twin_min(q: &Mlp, p1: &[f64], p2: &[f64], inputs: &[f64], n: usize) -> Result<Vec<f64>> {
    let a = q.forward_batch(p1, inputs, n)?;
    let b = q.forward_batch(p2, inputs, n)?;
    Ok(a.output().iter().zip(b.output()).map(|(x, y)| x.min(*y)).collect())
}

fn divergence(step: u64, what: impl Into<String>) -> Error {
    Error::Divergence {
        step,
        what: what.into(),
    }
}

fn check_loss(step: u64, name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(divergence(step, format!("{name} = {value}")));
    }
    Ok(())
}

fn adam(step: u64, name: &str, opt: &mut OptimizerState, params: &mut ParamVector, grad: &[f64]) -> Result<f64> {
    opt.step(params, grad).map_err(|e| match e {
        Error::NonFiniteGradient { index } => divergence(step, format!("{name} gradient entry {index}")),
        other => other,
    })?;
    Ok(crate::nnet::l2_norm(grad))
}

/// Mean-squared Bellman error step on both Q heads towards `targets`.
/// Returns `(mean loss over heads, gradient norm over heads, pre-step twin-min mean)`.
fn q_step(
    state: &mut AgentState,
    q: &Mlp,
    inputs: &[f64],
    targets: &[f64],
    step: u64,
) -> Result<(f64, f64, f64)> {
    let n = targets.len();
    let mut losses = [0.0; 2];
    let mut norms = [0.0; 2];
    let mut outputs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for head in 0..2 {
        let (params, opt, name) = if head == 0 {
            (&mut state.q1, &mut state.opt_q1, "q1")
        } else {
            (&mut state.q2, &mut state.opt_q2, "q2")
        };
        let tape = q.forward_batch(params, inputs, n)?;
        let out = tape.output();
        let mut adj = vec![0.0; n];
        let mut loss = 0.0;
        for i in 0..n {
            let d = out[i] - targets[i];
            loss += d * d / n as f64;
            adj[i] = 2.0 * d / n as f64;
        }
        check_loss(step, "q loss", loss)?;
        let g = q.backward(params, &tape, &adj)?.params;
        norms[head] = adam(step, name, opt, params, &g)?;
        losses[head] = loss;
        outputs[head] = out.to_vec();
    }
    let q_mean = mean(
        &outputs[0]
            .iter()
            .zip(&outputs[1])
            .map(|(a, b)| a.min(*b))
            .collect::<Vec<_>>(),
    );
    Ok((
        0.5 * (losses[0] + losses[1]),
        (norms[0] * norms[0] + norms[1] * norms[1]).sqrt(),
        q_mean,
    ))
}

fn policy_step(
    state: &mut AgentState,
    pi: &PolicyNet,
    batch: &Batch,
    weights: &[f64],
    step: u64,
) -> Result<(f64, f64)> {
    let (loss, g) = pi.weighted_nll_grad(&state.pi, &batch.feats, &batch.actions, weights)?;
    check_loss(step, "policy loss", loss)?;
    let norm = adam(step, "pi", &mut state.opt_pi, &mut state.pi, &g)?;
    Ok((loss, norm))
}

fn track_targets(state: &mut AgentState, tau: f64) -> Result<()> {
    soft_update(&mut state.q1_target, &state.q1, tau)?;
    soft_update(&mut state.q2_target, &state.q2, tau)
}

fn finish(mut next: AgentState, metrics: StepMetrics) -> Result<(AgentState, StepMetrics)> {
    if let Some(name) = next.first_non_finite() {
        return Err(divergence(metrics.step, format!("parameter '{name}' became non-finite")));
    }
    next.step += 1;
    Ok((next, metrics))
}

/// One QQL iteration on `batch`.
///
/// Value networks regress the target twin-minimum Q with pinball losses at
/// `α1`/`α2`, plus (with value regularization) a `λ`-weighted term at one
/// fresh policy action per next state. The Q heads then regress the
/// corrected Bellman target built from the updated values, and the policy
/// takes a temperature-free advantage-weighted step.
pub fn qql_update(
    state: &AgentState,
    batch: &Batch,
    cfg: &TrainConfig,
    flags: AblationFlags,
    rng: &mut dyn RngCore,
) -> Result<(AgentState, StepMetrics)> {
    check_batch(state, batch)?;
    let nets = state.networks()?;
    let mut next = state.clone();
    let step = state.step;
    let (n, f, ad) = (batch.size, state.spec.feature_dim, state.spec.action_dim);
    let mut m = StepMetrics::empty(step);

    let data_in = critic_inputs(&batch.feats, f, &batch.action_enc, ad, n);
    let q_data = twin_min(&nets.q, &state.q1_target, &state.q2_target, &data_in, n)?;

    let lambda = if flags.value_regularization { cfg.lambda } else { 0.0 };
    let q_pi = if lambda != 0.0 {
        let sampled = nets.pi.sample(&state.pi, &batch.next_feats, n, rng)?;
        let space = crate::envs::Env::new(state.spec.env)?.action_space();
        let mut enc = Vec::with_capacity(n * ad);
        for a in &sampled {
            space.encode(a, &mut enc)?;
        }
        let pi_in = critic_inputs(&batch.next_feats, f, &enc, ad, n);
        twin_min(&nets.q, &state.q1_target, &state.q2_target, &pi_in, n)?
    } else {
        vec![0.0; n]
    };

    // Values at s (rows 0..n) and s' (rows n..2n) in one pass.
    let mut v_in = batch.feats.clone();
    v_in.extend_from_slice(&batch.next_feats);
    let levels = ValueLossLevels::new(&quantile_levels(), flags.conservative_estimation);
    let t1 = nets.v.forward_batch(&state.v1, &v_in, 2 * n)?;
    let t2 = nets.v.forward_batch(&state.v2, &v_in, 2 * n)?;
    let (o1, o2) = (t1.output(), t2.output());
    let mut adj1 = vec![0.0; 2 * n];
    let mut adj2 = vec![0.0; 2 * n];
    let (mut l1, mut l2) = (0.0, 0.0);
    let inv = 1.0 / n as f64;
    for i in 0..n {
        let at_s = ValuePairReadout::new(o1[i], o2[i]);
        let at_next = ValuePairReadout::new(o1[n + i], o2[n + i]);
        let t = qql_value_terms(q_data[i], q_pi[i], at_s, at_next, lambda, &levels);
        l1 += t.loss_psi1 * inv;
        l2 += t.loss_psi2 * inv;
        adj1[i] = t.d_v1_s * inv;
        adj1[n + i] = t.d_v1_next * inv;
        adj2[i] = t.d_v2_s * inv;
        adj2[n + i] = t.d_v2_next * inv;
    }
    check_loss(step, "v1 loss", l1)?;
    check_loss(step, "v2 loss", l2)?;
    let g1 = nets.v.backward(&state.v1, &t1, &adj1)?.params;
    let g2 = nets.v.backward(&state.v2, &t2, &adj2)?.params;
    m.loss_v1 = l1;
    m.loss_v2 = l2;
    m.grad_norm_v1 = adam(step, "v1", &mut next.opt_v1, &mut next.v1, &g1)?;
    m.grad_norm_v2 = adam(step, "v2", &mut next.opt_v2, &mut next.v2, &g2)?;

    // Updated values; the correction V̂(s) - V(s) is a constant for the Q step.
    let u1 = nets.v.forward_batch(&next.v1, &v_in, 2 * n)?;
    let u2 = nets.v.forward_batch(&next.v2, &v_in, 2 * n)?;
    let (v1, v2) = (u1.output(), u2.output());
    let targets: Vec<f64> = (0..n)
        .map(|i| {
            bellman_target(
                batch.rewards[i],
                v2[n + i],
                v1[i],
                v2[i],
                cfg.gamma,
                batch.terminals[i],
            )
        })
        .collect();
    let (lq, gq, q_mean) = q_step(&mut next, &nets.q, &data_in, &targets, step)?;
    m.loss_q = lq;
    m.grad_norm_q = gq;
    m.q_mean = q_mean;

    let pw = cfg.policy_weights();
    let mut weights = Vec::with_capacity(n);
    let mut beta_sum = 0.0;
    for i in 0..n {
        let r = ValuePairReadout::new(v1[i], v2[i]);
        beta_sum += beta_from_values(r, cfg.beta_low, false);
        weights.push(qql_awr_weight(q_data[i], r, &pw));
    }
    m.beta_mean = beta_sum * inv;
    m.weight_mean = mean(&weights);
    m.v1_mean = mean(&v1[..n]);
    m.v2_mean = mean(&v2[..n]);
    let (lp, gp) = policy_step(&mut next, &nets.pi, batch, &weights, step)?;
    m.loss_pi = lp;
    m.grad_norm_pi = gp;

    track_targets(&mut next, cfg.tau)?;
    finish(next, m)
}

/// One XQL iteration with fixed temperature `beta`: Gumbel regression of
/// `V` on the target twin-minimum Q, MSE Bellman step bootstrapping `V(s')`,
/// then an exponentially weighted policy step.
pub fn xql_update(
    state: &AgentState,
    batch: &Batch,
    cfg: &TrainConfig,
    beta: f64,
    _rng: &mut dyn RngCore,
) -> Result<(AgentState, StepMetrics)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("XQL needs beta > 0, got {beta}")));
    }
    check_batch(state, batch)?;
    let nets = state.networks()?;
    let mut next = state.clone();
    let step = state.step;
    let (n, f, ad) = (batch.size, state.spec.feature_dim, state.spec.action_dim);
    let inv = 1.0 / n as f64;
    let mut m = StepMetrics::empty(step);

    let data_in = critic_inputs(&batch.feats, f, &batch.action_enc, ad, n);
    let q_data = twin_min(&nets.q, &state.q1_target, &state.q2_target, &data_in, n)?;

    let tape = nets.v.forward_batch(&state.v1, &batch.feats, n)?;
    let mut adj = vec![0.0; n];
    let mut lv = 0.0;
    for (i, (&q, &v)) in q_data.iter().zip(tape.output()).enumerate() {
        lv += xql_value_loss(q, v, beta)? * inv;
        adj[i] = xql_value_loss_grad_v(q, v, beta)? * inv;
    }
    check_loss(step, "v loss", lv)?;
    let g = nets.v.backward(&state.v1, &tape, &adj)?.params;
    m.loss_v1 = lv;
    m.grad_norm_v1 = adam(step, "v1", &mut next.opt_v1, &mut next.v1, &g)?;

    let mut v_in = batch.feats.clone();
    v_in.extend_from_slice(&batch.next_feats);
    let vt = nets.v.forward_batch(&next.v1, &v_in, 2 * n)?;
    let v = vt.output();
    let targets: Vec<f64> = (0..n)
        .map(|i| {
            let boot = if batch.terminals[i] { 0.0 } else { cfg.gamma * v[n + i] };
            batch.rewards[i] + boot
        })
        .collect();
    let (lq, gq, q_mean) = q_step(&mut next, &nets.q, &data_in, &targets, step)?;
    m.loss_q = lq;
    m.grad_norm_q = gq;
    m.q_mean = q_mean;

    let weights = (0..n)
        .map(|i| xql_awr_weight(q_data[i], v[i], beta, cfg.weight_cap))
        .collect::<Result<Vec<_>>>()?;
    m.beta_mean = beta;
    m.weight_mean = mean(&weights);
    m.v1_mean = mean(&v[..n]);
    let (lp, gp) = policy_step(&mut next, &nets.pi, batch, &weights, step)?;
    m.loss_pi = lp;
    m.grad_norm_pi = gp;

    track_targets(&mut next, cfg.tau)?;
    finish(next, m)
}

/// One behavior-cloning step: maximize `log π(a|s)` on the batch.
pub fn bc_update(state: &AgentState, batch: &Batch, _cfg: &TrainConfig) -> Result<(AgentState, StepMetrics)> {
    check_batch(state, batch)?;
    let nets = state.networks()?;
    let mut next = state.clone();
    let mut m = StepMetrics::empty(state.step);
    let weights = vec![1.0; batch.size];
    let (lp, gp) = policy_step(&mut next, &nets.pi, batch, &weights, state.step)?;
    m.loss_pi = lp;
    m.grad_norm_pi = gp;
    m.weight_mean = 1.0;
    finish(next, m)
}
