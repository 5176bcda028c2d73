//! Toy MDPs with known dynamics, and brute-force oracles for them.
//!
//! * `grid5`: deterministic 5×5 gridworld, goal in the bottom-right corner.
//! * `pointmass`: 2-D point driven by bounded velocity commands.
//! * `gumbel-bandit`: one state, 1-D action, reward from a fixed random net.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Mlp, MlpSpec, ParamVector};

pub const GRID_SIZE: usize = 5;
pub const GRID_CELLS: usize = GRID_SIZE * GRID_SIZE;
pub const GRID_ACTIONS: usize = 4;
pub const GRID_GOAL: (usize, usize) = (GRID_SIZE - 1, GRID_SIZE - 1);
pub const GRID_EPISODE_CAP: usize = 50;

pub const POINTMASS_GOAL: [f64; 2] = [0.5, 0.5];
pub const POINTMASS_HORIZON: usize = 40;
pub const POINTMASS_GAIN: f64 = 0.2;

pub const BANDIT_HIDDEN: [usize; 2] = [16, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    #[serde(rename = "grid5")]
    Grid5,
    #[serde(rename = "pointmass")]
    PointMass,
    #[serde(rename = "gumbel-bandit")]
    GumbelBandit,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::Grid5 => "grid5",
            EnvId::PointMass => "pointmass",
            EnvId::GumbelBandit => "gumbel-bandit",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid5" => Ok(EnvId::Grid5),
            "pointmass" => Ok(EnvId::PointMass),
            "gumbel-bandit" => Ok(EnvId::GumbelBandit),
            other => Err(Error::Unsupported(format!("unknown environment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(id: EnvId, seed: u64) -> Self {
        Self { id, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the action encoding fed to critics.
    pub fn feature_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    /// One-hot for discrete actions, the clipped vector for continuous ones.
    pub fn encode(&self, action: &Action, out: &mut Vec<f64>) -> Result<()> {
        match (*self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if *a < n => {
                out.extend((0..n).map(|i| if i == *a { 1.0 } else { 0.0 }));
                Ok(())
            }
            (ActionSpace::Box { dim, low, high }, Action::Continuous(v)) if v.len() == dim => {
                out.extend(v.iter().map(|x| x.clamp(low, high)));
                Ok(())
            }
            (ActionSpace::Discrete(n), Action::Discrete(a)) => Err(Error::domain(format!(
                "discrete action {a} outside 0..{n}"
            ))),
            (ActionSpace::Box { dim, .. }, Action::Continuous(v)) => Err(Error::Shape {
                context: "continuous action",
                expected: dim,
                got: v.len(),
            }),
            _ => Err(Error::domain("action kind does not match the action space")),
        }
    }

    pub fn sample_uniform(&self, rng: &mut dyn RngCore) -> Action {
        match *self {
            ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..n)),
            ActionSpace::Box { dim, low, high } => {
                Action::Continuous((0..dim).map(|_| rng.random_range(low..high)).collect())
            }
        }
    }
}

/// Observation plus the number of steps already taken in the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    /// The episode reached an absorbing state; no bootstrapping past it.
    pub terminal: bool,
    /// The episode hit its step cap without reaching an absorbing state.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A toy environment instance. Cheap to clone; value semantics.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    bandit: Option<(Mlp, ParamVector)>,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        let bandit = match spec.id {
            EnvId::GumbelBandit => {
                let net = Mlp::new(MlpSpec::new(1, &BANDIT_HIDDEN, 1))?;
                let params = net.init(spec.seed);
                Some((net, params))
            }
            _ => None,
        };
        Ok(Self { spec, bandit })
    }

    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn id(&self) -> EnvId {
        self.spec.id
    }

    pub fn obs_dim(&self) -> usize {
        match self.spec.id {
            EnvId::Grid5 => 2,
            EnvId::PointMass => 2,
            EnvId::GumbelBandit => 1,
        }
    }

    /// Width of the network input produced by [`Env::features`].
    pub fn feature_dim(&self) -> usize {
        match self.spec.id {
            EnvId::Grid5 => GRID_CELLS,
            _ => self.obs_dim(),
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self.spec.id {
            EnvId::Grid5 => ActionSpace::Discrete(GRID_ACTIONS),
            EnvId::PointMass => ActionSpace::Box {
                dim: 2,
                low: -1.0,
                high: 1.0,
            },
            EnvId::GumbelBandit => ActionSpace::Box {
                dim: 1,
                low: -1.0,
                high: 1.0,
            },
        }
    }

    pub fn horizon(&self) -> usize {
        match self.spec.id {
            EnvId::Grid5 => GRID_EPISODE_CAP,
            EnvId::PointMass => POINTMASS_HORIZON,
            EnvId::GumbelBandit => 1,
        }
    }

    /// Network input encoding of an observation: one-hot cell for `grid5`,
    /// the raw observation otherwise.
    pub fn features(&self, obs: &[f64], out: &mut Vec<f64>) {
        match self.spec.id {
            EnvId::Grid5 => {
                let idx = grid_index(obs);
                out.extend((0..GRID_CELLS).map(|i| if i == idx { 1.0 } else { 0.0 }));
            }
            _ => out.extend_from_slice(obs),
        }
    }

    pub fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        let obs = match self.spec.id {
            EnvId::Grid5 => {
                let goal = grid_cell_index(GRID_GOAL);
                // Uniform over non-goal cells.
                let mut idx = rng.random_range(0..GRID_CELLS - 1);
                if idx >= goal {
                    idx += 1;
                }
                grid_obs(idx).to_vec()
            }
            EnvId::PointMass => vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            EnvId::GumbelBandit => vec![0.0],
        };
        EnvState { obs, t: 0 }
    }

    pub fn step(&self, state: &EnvState, action: &Action, _rng: &mut dyn RngCore) -> Result<StepOutcome> {
        if state.obs.len() != self.obs_dim() {
            return Err(Error::Shape {
                context: "environment state",
                expected: self.obs_dim(),
                got: state.obs.len(),
            });
        }
        let t = state.t + 1;
        match self.spec.id {
            EnvId::Grid5 => {
                let a = match action {
                    Action::Discrete(a) if *a < GRID_ACTIONS => *a,
                    Action::Discrete(a) => {
                        return Err(Error::domain(format!("grid5 action {a} outside 0..4")))
                    }
                    Action::Continuous(v) => {
                        return Err(Error::Shape {
                            context: "grid5 action (expects a discrete index)",
                            expected: 1,
                            got: v.len(),
                        })
                    }
                };
                let next = grid_next(grid_index(&state.obs), a);
                let terminal = next == grid_cell_index(GRID_GOAL);
                Ok(StepOutcome {
                    next: EnvState {
                        obs: grid_obs(next).to_vec(),
                        t,
                    },
                    reward: if terminal { 1.0 } else { 0.0 },
                    terminal,
                    truncated: !terminal && t >= GRID_EPISODE_CAP,
                })
            }
            EnvId::PointMass => {
                let a = self.continuous_action(action, 2)?;
                let obs: Vec<f64> = state
                    .obs
                    .iter()
                    .zip(&a)
                    .map(|(s, u)| (s + POINTMASS_GAIN * u).clamp(-1.0, 1.0))
                    .collect();
                let reward = -distance(&obs, &POINTMASS_GOAL);
                Ok(StepOutcome {
                    next: EnvState { obs, t },
                    reward,
                    terminal: false,
                    truncated: t >= POINTMASS_HORIZON,
                })
            }
            EnvId::GumbelBandit => {
                let a = self.continuous_action(action, 1)?;
                Ok(StepOutcome {
                    next: EnvState {
                        obs: state.obs.clone(),
                        t,
                    },
                    reward: self.bandit_output(a[0]),
                    terminal: true,
                    truncated: false,
                })
            }
        }
    }

    fn continuous_action(&self, action: &Action, dim: usize) -> Result<Vec<f64>> {
        match action {
            Action::Continuous(v) if v.len() == dim => {
                Ok(v.iter().map(|x| x.clamp(-1.0, 1.0)).collect())
            }
            Action::Continuous(v) => Err(Error::Shape {
                context: "continuous action",
                expected: dim,
                got: v.len(),
            }),
            Action::Discrete(_) => Err(Error::Shape {
                context: "continuous action (got a discrete index)",
                expected: dim,
                got: 1,
            }),
        }
    }

    /// Output of the bandit's fixed random network at action `a`; panics on
    /// other environments.
    pub fn bandit_output(&self, a: f64) -> f64 {
        let (net, params) = self.bandit.as_ref().expect("not a gumbel-bandit env");
        net.forward(params, &[a]).expect("bandit network shape")[0]
    }

    /// Batched bandit network outputs, unclipped actions.
    pub fn bandit_outputs(&self, actions: &[f64]) -> Vec<f64> {
        let (net, params) = self.bandit.as_ref().expect("not a gumbel-bandit env");
        net.forward_batch(params, actions, actions.len())
            .expect("bandit network shape")
            .output()
            .to_vec()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn grid_cell_index((row, col): (usize, usize)) -> usize {
    row * GRID_SIZE + col
}

/// Cell index of a `[row, col]` observation.
pub fn grid_index(obs: &[f64]) -> usize {
    let row = (obs[0].round().max(0.0) as usize).min(GRID_SIZE - 1);
    let col = (obs[1].round().max(0.0) as usize).min(GRID_SIZE - 1);
    grid_cell_index((row, col))
}

pub fn grid_obs(idx: usize) -> [f64; 2] {
    [(idx / GRID_SIZE) as f64, (idx % GRID_SIZE) as f64]
}

/// Deterministic move: 0 up, 1 down, 2 left, 3 right; walls block.
pub fn grid_next(idx: usize, action: usize) -> usize {
    let (row, col) = (idx / GRID_SIZE, idx % GRID_SIZE);
    let (row, col) = match action {
        0 => (row.saturating_sub(1), col),
        1 => ((row + 1).min(GRID_SIZE - 1), col),
        2 => (row, col.saturating_sub(1)),
        3 => (row, (col + 1).min(GRID_SIZE - 1)),
        _ => (row, col),
    };
    grid_cell_index((row, col))
}

/// Exact solution of a finite environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSolution {
    pub gamma: f64,
    /// `q_star[s][a]`; rows of absorbing states are zero.
    pub q_star: Vec<Vec<f64>>,
    pub v_star: Vec<f64>,
    pub v_soft: Option<Vec<f64>>,
}

impl TabularSolution {
    /// Fills `v_soft` with the log-sum-exp value of every `q_star` row.
    pub fn with_soft_values(mut self, beta: f64) -> Result<Self> {
        let soft = self
            .q_star
            .iter()
            .map(|row| soft_value(row, beta))
            .collect::<Result<Vec<_>>>()?;
        self.v_soft = Some(soft);
        Ok(self)
    }

    /// Lowest-index greedy action in state `s`.
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = &self.q_star[s];
        let mut best = 0;
        for (a, &q) in row.iter().enumerate() {
            if q > row[best] {
                best = a;
            }
        }
        best
    }
}

const VI_TOL: f64 = 1e-10;
const VI_MAX_SWEEPS: usize = 1_000_000;

/// Value iteration on `grid5` to a sup-norm residual below `1e-10`.
pub fn solve_tabular(env: &Env, gamma: f64) -> Result<TabularSolution> {
    if env.id() != EnvId::Grid5 {
        return Err(Error::Unsupported(format!(
            "no tabular oracle for continuous environment '{}'",
            env.id()
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::domain(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let goal = grid_cell_index(GRID_GOAL);
    let mut v = vec![0.0; GRID_CELLS];
    let backup = |v: &[f64], s: usize, a: usize| -> f64 {
        let next = grid_next(s, a);
        if next == goal {
            1.0
        } else {
            gamma * v[next]
        }
    };
    for _ in 0..VI_MAX_SWEEPS {
        let mut residual = 0.0f64;
        let mut fresh = vec![0.0; GRID_CELLS];
        for s in (0..GRID_CELLS).filter(|&s| s != goal) {
            fresh[s] = (0..GRID_ACTIONS)
                .map(|a| backup(&v, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((fresh[s] - v[s]).abs());
        }
        v = fresh;
        if residual < VI_TOL {
            break;
        }
    }
    let q_star: Vec<Vec<f64>> = (0..GRID_CELLS)
        .map(|s| {
            if s == goal {
                vec![0.0; GRID_ACTIONS]
            } else {
                (0..GRID_ACTIONS).map(|a| backup(&v, s, a)).collect()
            }
        })
        .collect();
    let v_star = q_star
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(TabularSolution {
        gamma,
        q_star,
        v_star,
        v_soft: None,
    })
}

/// Discrete soft value `β·ln Σ_a exp(q(a)/β)`, computed with a max shift.
pub fn soft_value(q_row: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("soft value needs beta > 0, got {beta}")));
    }
    if q_row.is_empty() || q_row.iter().any(|q| !q.is_finite()) {
        return Err(Error::domain("soft value needs a non-empty finite row"));
    }
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = q_row.iter().map(|q| ((q - max) / beta).exp()).sum();
    Ok(max + beta * sum.ln())
}

/// A rule for choosing actions.
pub trait Policy {
    fn act(&self, env: &Env, state: &EnvState, rng: &mut dyn RngCore) -> Action;
}

/// Uniform over the action space.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn act(&self, env: &Env, _state: &EnvState, rng: &mut dyn RngCore) -> Action {
        env.action_space().sample_uniform(rng)
    }
}

/// Greedy with respect to an exact tabular solution.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub solution: TabularSolution,
}

impl Policy for OraclePolicy {
    fn act(&self, _env: &Env, state: &EnvState, _rng: &mut dyn RngCore) -> Action {
        Action::Discrete(self.solution.greedy_action(grid_index(&state.obs)))
    }
}

/// Saturating proportional controller that steers the point mass to its
/// goal; moves straight onto the goal when within one step of it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedController;

impl ScriptedController {
    pub fn command(obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(POINTMASS_GOAL)
            .map(|(s, g)| ((g - s) / POINTMASS_GAIN).clamp(-1.0, 1.0))
            .collect()
    }
}

impl Policy for ScriptedController {
    fn act(&self, _env: &Env, state: &EnvState, _rng: &mut dyn RngCore) -> Action {
        Action::Continuous(Self::command(&state.obs))
    }
}
