//! Policy evaluation, normalized scores, reference returns and the Gumbel
//! scale experiment on the bandit.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::{
    solve_tabular, Action, Env, EnvId, EnvSpec, EnvState, OraclePolicy, Policy, ScriptedController,
    UniformPolicy,
};
use crate::error::{Error, Result};
use crate::gumbel::{fit_mle, ks_test, GofReport, GumbelParams};
use crate::nnet::PolicyNet;

/// Rewards collected along one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub rewards: Vec<f64>,
    pub reached_terminal: bool,
}

impl Episode {
    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    /// Population standard deviation of the episode returns.
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::domain("no episodes to summarize"));
        }
        let mut sorted = returns.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            returns,
        })
    }
}

/// Runs `policy` from `start` until termination or truncation.
pub fn rollout(env: &Env, policy: &dyn Policy, start: EnvState, rng: &mut dyn RngCore) -> Result<Episode> {
    let mut state = start;
    let mut ep = Episode {
        rewards: Vec::new(),
        reached_terminal: false,
    };
    loop {
        let action = policy.act(env, &state, rng);
        let out = env.step(&state, &action, rng)?;
        ep.rewards.push(out.reward);
        if out.terminal {
            ep.reached_terminal = true;
            return Ok(ep);
        }
        if out.truncated {
            return Ok(ep);
        }
        state = out.next;
    }
}

/// Undiscounted returns of `episodes` episodes from random start states.
pub fn evaluate(env: &Env, policy: &dyn Policy, episodes: usize, rng: &mut dyn RngCore) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::domain("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let start = env.reset(rng);
        returns.push(rollout(env, policy, start, rng)?.total());
    }
    EvalReport::from_returns(returns)
}

/// `100·(ret - random)/(expert - random)`.
pub fn normalized_score(ret: f64, random_ret: f64, expert_ret: f64) -> Result<f64> {
    let span = expert_ret - random_ret;
    if !(span > 0.0) || !span.is_finite() || !ret.is_finite() {
        return Err(Error::domain(format!(
            "normalization needs expert ({expert_ret}) above random ({random_ret})"
        )));
    }
    Ok(100.0 * (ret - random_ret) / span)
}

/// Deterministic action of a trained policy network: categorical argmax or
/// Gaussian mean.
pub struct GreedyPolicy<'a> {
    net: PolicyNet,
    params: &'a [f64],
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(env: &Env, net: PolicyNet, params: &'a [f64]) -> Result<Self> {
        if net.num_params() != params.len() {
            return Err(Error::Shape {
                context: "policy parameters",
                expected: net.num_params(),
                got: params.len(),
            });
        }
        if net.mlp().input_dim() != env.feature_dim() {
            return Err(Error::Schema(format!(
                "policy expects {} input features, '{}' provides {}",
                net.mlp().input_dim(),
                env.id(),
                env.feature_dim()
            )));
        }
        Ok(Self { net, params })
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&self, env: &Env, state: &EnvState, _rng: &mut dyn RngCore) -> Action {
        let mut feat = Vec::with_capacity(env.feature_dim());
        env.features(&state.obs, &mut feat);
        self.net
            .mode(self.params, &feat)
            .expect("shapes checked at construction")
    }
}

/// Best action of the bandit found on a uniform grid over `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct BanditOracle {
    pub action: f64,
}

impl BanditOracle {
    pub fn new(env: &Env) -> Result<Self> {
        if env.id() != EnvId::GumbelBandit {
            return Err(Error::Unsupported(format!("no bandit oracle for '{}'", env.id())));
        }
        let grid: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 / 1000.0).collect();
        let out = env.bandit_outputs(&grid);
        let mut best = 0;
        for (i, v) in out.iter().enumerate() {
            if *v > out[best] {
                best = i;
            }
        }
        Ok(Self { action: grid[best] })
    }
}

impl Policy for BanditOracle {
    fn act(&self, _env: &Env, _state: &EnvState, _rng: &mut dyn RngCore) -> Action {
        Action::Continuous(vec![self.action])
    }
}

/// The best available reference policy: the exact oracle on `grid5`, the
/// scripted controller on `pointmass` and a grid search on the bandit.
pub fn expert_policy(env: &Env) -> Result<Box<dyn Policy>> {
    Ok(match env.id() {
        EnvId::Grid5 => Box::new(OraclePolicy {
            solution: solve_tabular(env, 0.99)?,
        }),
        EnvId::PointMass => Box::new(ScriptedController),
        EnvId::GumbelBandit => Box::new(BanditOracle::new(env)?),
    })
}

/// Random and expert returns used to normalize scores on one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub env: EnvSpec,
    pub episodes: usize,
    pub seed: u64,
    pub random_return: f64,
    pub expert_return: f64,
}

impl References {
    pub fn compute(env: &Env, episodes: usize, seed: u64) -> Result<Self> {
        let random = evaluate(env, &UniformPolicy, episodes, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let expert = evaluate(env, expert_policy(env)?.as_ref(), episodes, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self {
            env: env.spec(),
            episodes,
            seed,
            random_return: random.mean,
            expert_return: expert.mean,
        })
    }

    pub fn score(&self, ret: f64) -> Result<f64> {
        normalized_score(ret, self.random_return, self.expert_return)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// One row of the Gumbel scale experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaScaleRow {
    pub std: f64,
    pub fit: GumbelParams,
    pub gof: GofReport,
}

pub const BETA_SCALE_MIN_ACTIONS: usize = 500;

/// For each policy std, draws `n_actions` actions `a ~ N(0, std²)`, forms
/// `-Q(s, a) = -Q*(s, a) + g` with the bandit network as `-Q*` and
/// `g ~ G(0, beta_true)`, then fits a Gumbel law by maximum likelihood and
/// KS-tests the fit. Row `i` uses its own random stream.
pub fn beta_scale_experiment(seed: u64, policy_stds: &[f64], n_actions: usize, beta_true: f64) -> Result<Vec<BetaScaleRow>> {
    if n_actions < BETA_SCALE_MIN_ACTIONS {
        return Err(Error::Precondition(format!(
            "beta-scale experiment needs at least {BETA_SCALE_MIN_ACTIONS} actions, got {n_actions}"
        )));
    }
    let noise = GumbelParams::new(0.0, beta_true)?;
    let env = Env::new(EnvSpec::new(EnvId::GumbelBandit, seed))?;
    policy_stds
        .iter()
        .enumerate()
        .map(|(i, &std)| {
            let normal = Normal::new(0.0, std)
                .map_err(|_| Error::domain(format!("policy std must be >= 0, got {std}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let actions: Vec<f64> = (0..n_actions).map(|_| normal.sample(&mut rng)).collect();
            let neg_q: Vec<f64> = env
                .bandit_outputs(&actions)
                .into_iter()
                .map(|x| x + noise.sample_one(&mut rng))
                .collect();
            let fit = fit_mle(&neg_q)?;
            let gof = ks_test(&neg_q, &fit)?;
            Ok(BetaScaleRow { std, fit, gof })
        })
        .collect()
}

pub const BETA_SCALE_CSV_HEADER: &str = "std,loc,scale,ks,p";

pub fn beta_scale_csv(rows: &[BetaScaleRow]) -> String {
    let mut out = String::from(BETA_SCALE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.std,
            r.fit.location(),
            r.fit.scale(),
            r.gof.ks_statistic,
            r.gof.p_value
        ));
    }
    out
}
