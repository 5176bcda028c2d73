//! Offline datasets: generation under behavior policies, JSON-Lines
//! serialization with a metadata sidecar, and uniform minibatch sampling.
//!
//! On disk a dataset `d.jsonl` holds one transition per line,
//!
//! ```text
//! {"s":[...],"a":2,"r":0.0000000000000000e0,"s_next":[...],"terminal":false}
//! ```
//!
//! with reals printed to 17 significant digits, and `d.meta.json` records
//! `env_id`, `env_seed`, `behavior`, `seed` and `count`.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{
    solve_tabular, Action, ActionSpace, Env, EnvId, EnvSpec, EnvState, OraclePolicy, Policy,
    ScriptedController,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    UniformRandom,
    /// Oracle action with probability `1 - ε`, uniform otherwise.
    EpsilonOptimal(f64),
    /// Oracle (scripted) action plus `N(0, σ²)` noise, continuous envs only.
    GaussianNoisyOptimal(f64),
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::UniformRandom => write!(f, "uniform-random"),
            Behavior::EpsilonOptimal(e) => write!(f, "epsilon-optimal({e})"),
            Behavior::GaussianNoisyOptimal(s) => write!(f, "gaussian-noisy-optimal({s})"),
        }
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform-random" {
            return Ok(Behavior::UniformRandom);
        }
        let arg = |prefix: &str| -> Option<Result<f64>> {
            let rest = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(
                rest.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::domain(format!("bad behavior parameter in '{s}': {e}"))),
            )
        };
        if let Some(eps) = arg("epsilon-optimal") {
            let eps = eps?;
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::domain(format!("epsilon must lie in [0, 1], got {eps}")));
            }
            return Ok(Behavior::EpsilonOptimal(eps));
        }
        if let Some(sigma) = arg("gaussian-noisy-optimal") {
            let sigma = sigma?;
            if !(sigma >= 0.0) {
                return Err(Error::domain(format!("sigma must be >= 0, got {sigma}")));
            }
            return Ok(Behavior::GaussianNoisyOptimal(sigma));
        }
        Err(Error::Unsupported(format!(
            "unknown behavior '{s}' (expected uniform-random, epsilon-optimal(ε) or gaussian-noisy-optimal(σ))"
        )))
    }
}

impl Serialize for Behavior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Behavior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Acting rule behind a [`Behavior`] on a concrete environment.
pub struct BehaviorPolicy {
    behavior: Behavior,
    oracle: Option<OraclePolicy>,
}

impl BehaviorPolicy {
    pub fn new(env: &Env, behavior: Behavior) -> Result<Self> {
        let needs_oracle = !matches!(behavior, Behavior::UniformRandom);
        let oracle = match (env.id(), behavior) {
            (_, Behavior::UniformRandom) => None,
            (EnvId::Grid5, Behavior::EpsilonOptimal(_)) => Some(OraclePolicy {
                solution: solve_tabular(env, 0.99)?,
            }),
            (EnvId::PointMass, _) => None,
            (id, b) => {
                return Err(Error::Unsupported(format!(
                    "behavior '{b}' needs an oracle that '{id}' does not provide"
                )))
            }
        };
        debug_assert!(!needs_oracle || oracle.is_some() || env.id() == EnvId::PointMass);
        Ok(Self { behavior, oracle })
    }

    fn optimal(&self, env: &Env, state: &EnvState, rng: &mut dyn RngCore) -> Action {
        match &self.oracle {
            Some(o) => o.act(env, state, rng),
            None => ScriptedController.act(env, state, rng),
        }
    }
}

impl Policy for BehaviorPolicy {
    fn act(&self, env: &Env, state: &EnvState, rng: &mut dyn RngCore) -> Action {
        match self.behavior {
            Behavior::UniformRandom => env.action_space().sample_uniform(rng),
            Behavior::EpsilonOptimal(eps) => {
                if rng.random::<f64>() < eps {
                    env.action_space().sample_uniform(rng)
                } else {
                    self.optimal(env, state, rng)
                }
            }
            Behavior::GaussianNoisyOptimal(sigma) => {
                let Action::Continuous(mut a) = self.optimal(env, state, rng) else {
                    unreachable!("gaussian noise is only offered on continuous envs")
                };
                let noise = Normal::new(0.0, sigma).expect("sigma validated");
                for x in &mut a {
                    *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0);
                }
                Action::Continuous(a)
            }
        }
    }
}

/// Sidecar metadata of a saved dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_id: EnvId,
    pub env_seed: u64,
    pub behavior: Behavior,
    pub seed: u64,
    pub count: usize,
}

/// An immutable offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    env: EnvSpec,
    behavior: Behavior,
    seed: u64,
    transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(env: EnvSpec, behavior: Behavior, seed: u64, transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::domain("a dataset needs at least one transition"));
        }
        let probe = Env::new(env)?;
        for (i, t) in transitions.iter().enumerate() {
            check_transition(&probe, t).map_err(|e| Error::Schema(format!("transition {i}: {e}")))?;
        }
        Ok(Self {
            env,
            behavior,
            seed,
            transitions,
        })
    }

    pub fn env(&self) -> EnvSpec {
        self.env
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            env_id: self.env.id,
            env_seed: self.env.seed,
            behavior: self.behavior,
            seed: self.seed,
            count: self.len(),
        }
    }

    /// `batch_size` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        if self.transitions.is_empty() {
            return Err(Error::domain("cannot sample from an empty dataset"));
        }
        let n = self.transitions.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    /// Uniform-with-replacement minibatch.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.transitions[i])
            .collect())
    }

    /// The JSON-Lines body exactly as [`save`] writes it.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.transitions.len() * 96);
        for t in &self.transitions {
            write_transition(&mut out, t);
            out.push('\n');
        }
        out
    }

    /// Git-style content hash: SHA-256 over `"blob <len>\0" + jsonl`.
    pub fn content_hash(&self) -> String {
        let body = self.to_jsonl();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_transition(env: &Env, t: &Transition) -> Result<()> {
    let d = env.obs_dim();
    if t.s.len() != d || t.s_next.len() != d {
        return Err(Error::Shape {
            context: "transition state",
            expected: d,
            got: if t.s.len() != d { t.s.len() } else { t.s_next.len() },
        });
    }
    if !t.r.is_finite() || t.s.iter().chain(&t.s_next).any(|x| !x.is_finite()) {
        return Err(Error::domain("transition contains non-finite values"));
    }
    match (env.action_space(), &t.a) {
        (ActionSpace::Discrete(n), Action::Discrete(a)) if *a < n => Ok(()),
        (ActionSpace::Box { dim, .. }, Action::Continuous(v))
            if v.len() == dim && v.iter().all(|x| x.is_finite()) =>
        {
            Ok(())
        }
        _ => Err(Error::domain("action does not fit the environment's action space")),
    }
}

/// Rolls out `behavior` on `env` until `n` transitions are collected.
pub fn generate(env: &Env, behavior: Behavior, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("dataset size must be >= 1"));
    }
    let policy = BehaviorPolicy::new(env, behavior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n);
    while transitions.len() < n {
        let mut state = env.reset(&mut rng);
        loop {
            let action = policy.act(env, &state, &mut rng);
            let out = env.step(&state, &action, &mut rng)?;
            transitions.push(Transition {
                s: state.obs.clone(),
                a: clip_action(env, action),
                r: out.reward,
                s_next: out.next.obs.clone(),
                terminal: out.terminal,
            });
            if out.done() || transitions.len() == n {
                break;
            }
            state = out.next;
        }
    }
    Dataset::new(env.spec(), behavior, seed, transitions)
}

/// The action actually executed, i.e. clipped to the action box.
fn clip_action(env: &Env, action: Action) -> Action {
    match (env.action_space(), action) {
        (ActionSpace::Box { low, high, .. }, Action::Continuous(v)) => {
            Action::Continuous(v.into_iter().map(|x| x.clamp(low, high)).collect())
        }
        (_, a) => a,
    }
}

/// 17 significant digits: enough for an exact `f64` round-trip.
fn write_real(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").unwrap();
}

fn write_reals(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_real(out, *x);
    }
    out.push(']');
}

fn write_transition(out: &mut String, t: &Transition) {
    out.push_str("{\"s\":");
    write_reals(out, &t.s);
    out.push_str(",\"a\":");
    match &t.a {
        Action::Discrete(a) => write!(out, "{a}").unwrap(),
        Action::Continuous(v) => write_reals(out, v),
    }
    out.push_str(",\"r\":");
    write_real(out, t.r);
    out.push_str(",\"s_next\":");
    write_reals(out, &t.s_next);
    write!(out, ",\"terminal\":{}}}", t.terminal).unwrap();
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    s: Vec<f64>,
    a: Action,
    r: f64,
    s_next: Vec<f64>,
    terminal: bool,
}

/// Path of the metadata sidecar: `d.jsonl` → `d.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes the JSON-Lines body and its metadata sidecar.
pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset.to_jsonl()).map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    let mut text = serde_json::to_string_pretty(&dataset.meta())?;
    text.push('\n');
    fs::write(&meta, text).map_err(|e| Error::io(meta, e))?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<DatasetMeta> {
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", meta.display())))
}

/// Reads a dataset written by [`save`], validating it line by line.
pub fn load(path: &Path) -> Result<Dataset> {
    let meta = load_meta(path)?;
    let env_spec = EnvSpec::new(meta.env_id, meta.env_seed);
    let env = Env::new(env_spec)?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut transitions = Vec::with_capacity(meta.count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTransition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let t = Transition {
            s: raw.s,
            a: raw.a,
            r: raw.r,
            s_next: raw.s_next,
            terminal: raw.terminal,
        };
        check_transition(&env, &t).map_err(|e| {
            Error::Schema(format!("line {lineno} does not match env '{}': {e}", meta.env_id))
        })?;
        transitions.push(t);
    }
    if transitions.len() != meta.count {
        return Err(Error::Schema(format!(
            "metadata count {} but {} transitions in {}",
            meta.count,
            transitions.len(),
            path.display()
        )));
    }
    Dataset::new(env_spec, meta.behavior, meta.seed, transitions)
}
