//! Seeded end-to-end training runs with periodic evaluation, metric logs,
//! checkpoints and resume.
//!
//! An output directory holds `manifest.json`, `metrics.csv`, `eval.csv`,
//! `ckpt_final.json` and `ckpt_best.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    bc_update, qql_update, xql_update, AblationFlags, AgentSpec, AgentState, Algo, Batch, StepMetrics,
    TrainConfig,
};
use crate::data::Dataset;
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalReport, GreedyPolicy};

/// Named random sub-streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Batch = 1,
    PolicySample = 2,
    Eval = 3,
}

/// ChaCha8 keyed by `seed` on the stream reserved for `stream`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Words reserved per evaluation on the eval stream.
const EVAL_WORDS: u128 = 1 << 32;

/// Evaluation randomness at `step`: a fixed window of the eval stream, so
/// results do not depend on which evaluations ran before.
pub fn eval_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, Stream::Eval);
    rng.set_word_pos(step as u128 * EVAL_WORDS);
    rng
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Schema(format!("bad rng word position '{}': {e}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub algo: Algo,
    pub config: TrainConfig,
    pub flags: AblationFlags,
    pub agent: AgentState,
    pub batch_rng: RngState,
    pub policy_rng: RngState,
    pub best: Option<EvalPoint>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        ckpt.agent.validate()?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub hash: String,
    pub count: usize,
    pub behavior: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub algo: Algo,
    pub config: TrainConfig,
    pub flags: AblationFlags,
    pub env: crate::envs::EnvSpec,
    pub seed: u64,
    pub dataset: DatasetInfo,
    pub resumed_from_step: Option<u64>,
    pub version: String,
}

/// Summary of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algo: Algo,
    pub seed: u64,
    pub steps: u64,
    pub evals: Vec<EvalPoint>,
    pub final_eval: EvalPoint,
    pub best_eval: EvalPoint,
    pub last_metrics: Option<StepMetrics>,
    /// Largest `|q_mean|` seen in any logged step.
    pub max_abs_q_mean: f64,
    pub out_dir: PathBuf,
}

fn check_inputs(config: &TrainConfig, algo: Algo, dataset: &Dataset, env: &Env) -> Result<()> {
    config.validate()?;
    if dataset.env() != env.spec() {
        return Err(Error::Precondition(format!(
            "dataset was generated on {:?} but training targets {:?}",
            dataset.env(),
            env.spec()
        )));
    }
    match (algo, config.beta) {
        (Algo::Xql, None) => Err(Error::Precondition("xql needs a temperature beta".into())),
        (Algo::Qql, Some(_)) => Err(Error::Precondition(
            "qql estimates its own temperature; beta must not be set".into(),
        )),
        _ => Ok(()),
    }
}

fn evaluate_agent(env: &Env, agent: &AgentState, cfg: &TrainConfig, step: u64) -> Result<EvalPoint> {
    let nets = agent.networks()?;
    let policy = GreedyPolicy::new(env, nets.pi, &agent.pi)?;
    let r: EvalReport = evaluate(env, &policy, cfg.eval_episodes, &mut eval_rng(cfg.seed, step))?;
    Ok(EvalPoint {
        step,
        mean_return: r.mean,
        std_return: r.std,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line(w: &mut BufWriter<File>, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains `algo` from scratch for `config.steps` updates.
pub fn train(
    config: &TrainConfig,
    algo: Algo,
    dataset: &Dataset,
    env: &Env,
    flags: AblationFlags,
    out_dir: &Path,
) -> Result<RunReport> {
    check_inputs(config, algo, dataset, env)?;
    let spec = AgentSpec::for_env(env, &config.hidden_dims);
    let agent = AgentState::new(spec, config, &mut stream_rng(config.seed, Stream::Init))?;
    let ckpt = Checkpoint {
        algo,
        config: config.clone(),
        flags,
        agent,
        batch_rng: RngState::capture(config.seed, &stream_rng(config.seed, Stream::Batch)),
        policy_rng: RngState::capture(config.seed, &stream_rng(config.seed, Stream::PolicySample)),
        best: None,
    };
    run(ckpt, dataset, env, out_dir, None)
}

/// Continues a checkpointed run up to `total_steps` updates, writing a
/// fresh output directory whose metrics start after the checkpoint step.
pub fn resume(ckpt: Checkpoint, total_steps: u64, dataset: &Dataset, env: &Env, out_dir: &Path) -> Result<RunReport> {
    let mut ckpt = ckpt;
    ckpt.config.steps = total_steps;
    check_inputs(&ckpt.config, ckpt.algo, dataset, env)?;
    if ckpt.agent.spec.env != env.spec() {
        return Err(Error::Schema(format!(
            "checkpoint is for {:?}, not {:?}",
            ckpt.agent.spec.env,
            env.spec()
        )));
    }
    if total_steps < ckpt.agent.step {
        return Err(Error::Precondition(format!(
            "checkpoint is already at step {} > {total_steps}",
            ckpt.agent.step
        )));
    }
    let from = ckpt.agent.step;
    run(ckpt, dataset, env, out_dir, Some(from))
}

fn run(ckpt: Checkpoint, dataset: &Dataset, env: &Env, out_dir: &Path, resumed: Option<u64>) -> Result<RunReport> {
    let cfg = ckpt.config.clone();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let meta = dataset.meta();
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            algo: ckpt.algo,
            config: cfg.clone(),
            flags: ckpt.flags,
            env: env.spec(),
            seed: cfg.seed,
            dataset: DatasetInfo {
                hash: dataset.content_hash(),
                count: meta.count,
                behavior: meta.behavior.to_string(),
                seed: meta.seed,
            },
            resumed_from_step: resumed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )?;

    let metrics_path = out_dir.join("metrics.csv");
    let eval_path = out_dir.join("eval.csv");
    let mut metrics = create(&metrics_path)?;
    let mut evals_out = create(&eval_path)?;
    write_line(&mut metrics, &metrics_path, StepMetrics::CSV_HEADER)?;
    write_line(&mut evals_out, &eval_path, "step,mean_return,std_return")?;

    let mut trainer = Trainer {
        algo: ckpt.algo,
        flags: ckpt.flags,
        agent: ckpt.agent,
        batch_rng: ckpt.batch_rng.restore()?,
        policy_rng: ckpt.policy_rng.restore()?,
        best: ckpt.best,
        cfg,
        evals: Vec::new(),
        last: None,
        max_abs_q: 0.0,
    };
    let outcome = trainer.run_loop(dataset, env, out_dir, &mut metrics, &metrics_path, &mut evals_out, &eval_path);
    // Whatever happened, keep what was logged.
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    evals_out.flush().map_err(|e| Error::io(&eval_path, e))?;
    outcome?;

    let final_eval = *trainer.evals.last().expect("at least one evaluation");
    trainer.checkpoint().save(&out_dir.join("ckpt_final.json"))?;
    Ok(RunReport {
        algo: trainer.algo,
        seed: trainer.cfg.seed,
        steps: trainer.agent.step,
        best_eval: trainer.best.unwrap_or(final_eval),
        final_eval,
        evals: trainer.evals,
        last_metrics: trainer.last,
        max_abs_q_mean: trainer.max_abs_q,
        out_dir: out_dir.to_path_buf(),
    })
}

struct Trainer {
    algo: Algo,
    flags: AblationFlags,
    cfg: TrainConfig,
    agent: AgentState,
    batch_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    best: Option<EvalPoint>,
    evals: Vec<EvalPoint>,
    last: Option<StepMetrics>,
    max_abs_q: f64,
}

impl Trainer {
    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            algo: self.algo,
            config: self.cfg.clone(),
            flags: self.flags,
            agent: self.agent.clone(),
            batch_rng: RngState::capture(self.cfg.seed, &self.batch_rng),
            policy_rng: RngState::capture(self.cfg.seed, &self.policy_rng),
            best: self.best,
        }
    }

    fn eval_and_record(
        &mut self,
        env: &Env,
        out_dir: &Path,
        w: &mut BufWriter<File>,
        path: &Path,
    ) -> Result<()> {
        let point = evaluate_agent(env, &self.agent, &self.cfg, self.agent.step)?;
        write_line(w, path, &format!("{},{},{}", point.step, point.mean_return, point.std_return))?;
        log::info!(
            "step {}: eval return {:.4} ± {:.4}",
            point.step,
            point.mean_return,
            point.std_return
        );
        self.evals.push(point);
        if self.best.is_none_or(|b| point.mean_return > b.mean_return) {
            self.best = Some(point);
            self.checkpoint().save(&out_dir.join("ckpt_best.json"))?;
        }
        Ok(())
    }

    fn step(&mut self, dataset: &Dataset, env: &Env) -> Result<StepMetrics> {
        let picked = dataset.sample_batch(self.cfg.batch_size, &mut self.batch_rng)?;
        let batch = Batch::new(env, &picked)?;
        let (next, m) = match self.algo {
            Algo::Qql => qql_update(&self.agent, &batch, &self.cfg, self.flags, &mut self.policy_rng)?,
            Algo::Xql => {
                let beta = self.cfg.beta.expect("checked before training");
                xql_update(&self.agent, &batch, &self.cfg, beta, &mut self.policy_rng)?
            }
            Algo::Bc => bc_update(&self.agent, &batch, &self.cfg)?,
        };
        self.agent = next;
        Ok(m)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_loop(
        &mut self,
        dataset: &Dataset,
        env: &Env,
        out_dir: &Path,
        metrics: &mut BufWriter<File>,
        metrics_path: &Path,
        evals: &mut BufWriter<File>,
        eval_path: &Path,
    ) -> Result<()> {
        if self.agent.step == 0 || self.agent.step.is_multiple_of(self.cfg.eval_interval) {
            self.eval_and_record(env, out_dir, evals, eval_path)?;
        }
        while self.agent.step < self.cfg.steps {
            let m = self.step(dataset, env)?;
            if m.q_mean.is_finite() {
                self.max_abs_q = self.max_abs_q.max(m.q_mean.abs());
            }
            if m.step % self.cfg.log_interval == 0 {
                write_line(metrics, metrics_path, &m.csv_row())?;
            }
            self.last = Some(m);
            if self.agent.step.is_multiple_of(self.cfg.eval_interval) {
                self.eval_and_record(env, out_dir, evals, eval_path)?;
            }
        }
        if self.evals.last().is_none_or(|e| e.step != self.agent.step) {
            self.eval_and_record(env, out_dir, evals, eval_path)?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: Result<RunReport>,
}

#[derive(Debug)]
pub struct MultiSeedReport {
    /// Sorted by seed.
    pub runs: Vec<SeedOutcome>,
    /// Per-metric aggregate over the successful runs.
    pub aggregate: BTreeMap<String, MeanStd>,
    pub failures: usize,
}

impl MultiSeedReport {
    pub fn successes(&self) -> impl Iterator<Item = &RunReport> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok())
    }
}

/// Aggregated run metrics: final and best evaluation returns plus the last
/// logged value of every step metric.
fn run_scalars(r: &RunReport) -> Vec<(String, f64)> {
    let mut out = vec![
        ("final_return".to_string(), r.final_eval.mean_return),
        ("best_return".to_string(), r.best_eval.mean_return),
        ("max_abs_q_mean".to_string(), r.max_abs_q_mean),
    ];
    if let Some(m) = r.last_metrics {
        let names = StepMetrics::CSV_HEADER.split(',').skip(1);
        for (name, v) in names.zip(m.values()) {
            if v.is_finite() {
                out.push((format!("last_{name}"), v));
            }
        }
    }
    out
}

/// Runs one independent training per seed into `out_dir/seed_<seed>`.
/// Failed seeds are kept in the report and excluded from the aggregate.
pub fn multi_seed(
    config: &TrainConfig,
    algo: Algo,
    dataset: &Dataset,
    env: &Env,
    flags: AblationFlags,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<MultiSeedReport> {
    if seeds.is_empty() {
        return Err(Error::Precondition("multi-seed training needs at least one seed".into()));
    }
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let runs: Vec<SeedOutcome> = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            let result = train(&cfg, algo, dataset, env, flags, &out_dir.join(format!("seed_{seed}")));
            if let Err(e) = &result {
                log::warn!("seed {seed} failed: {e}");
            }
            SeedOutcome { seed, result }
        })
        .collect();
    let failures = runs.iter().filter(|r| r.result.is_err()).count();
    if failures > 0 && failures < runs.len() {
        log::warn!("{failures} of {} seeds failed; aggregating the rest", runs.len());
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs.iter().filter_map(|r| r.result.as_ref().ok()) {
        for (k, v) in run_scalars(r) {
            columns.entry(k).or_default().push(v);
        }
    }
    let aggregate = columns
        .into_iter()
        .filter_map(|(k, v)| MeanStd::of(&v).map(|s| (k, s)))
        .collect();
    Ok(MultiSeedReport {
        runs,
        aggregate,
        failures,
    })
}
