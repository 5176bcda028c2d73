//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{AblationFlags, Algo, TrainConfig};
use crate::data::{self, Behavior};
use crate::envs::{Env, EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::evalkit::{beta_scale_csv, beta_scale_experiment, evaluate, GreedyPolicy, References};
use crate::trainer::{multi_seed, train, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qql", version, about = "Quantile Q-Learning for offline RL on toy environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out a behavior policy and save the transitions as JSON Lines.
    GenData(GenDataArgs),
    /// Train QQL, XQL or behavior cloning on a saved dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint's deterministic policy.
    Eval(EvalArgs),
    /// Compute random and expert reference returns for an environment.
    References(ReferencesArgs),
    /// Fit Gumbel laws to noisy bandit values across policy spreads.
    BetaToy(BetaToyArgs),
    /// Render metric CSV columns as SVG line charts.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    /// Seed of the environment itself (the bandit's network).
    #[arg(long, default_value_t = 0)]
    pub env_seed: u64,
    /// uniform-random, epsilon-optimal(ε) or gaussian-noisy-optimal(σ).
    #[arg(long, default_value = "uniform-random", value_parser = parse_behavior)]
    pub behavior: Behavior,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "qql", value_parser = parse_algo)]
    pub algo: Algo,
    /// Must match the dataset; taken from its metadata when omitted.
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvId>,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file with any subset of the training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of gradient steps [default: 1000000]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Master seed [default: 0]
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds for independent runs, e.g. 0,1,2
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Mild-generalization coefficient λ [default: 1.0]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Policy constraint weight ζ [default: 1.0]
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Fixed Gumbel temperature, xql only
    #[arg(long)]
    pub beta: Option<f64>,
    /// Minibatch size [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, comma-separated [default: 256,256]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Steps between evaluations [default: 1000]
    #[arg(long)]
    pub eval_interval: Option<u64>,
    /// Episodes per evaluation [default: 10]
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Steps between metric rows [default: 1]
    #[arg(long)]
    pub log_interval: Option<u64>,
    /// Disable the value-regularization term
    #[arg(long)]
    pub no_vr: bool,
    /// Disable conservative estimation
    #[arg(long)]
    pub no_ce: bool,
    /// Continue from this checkpoint instead of starting fresh
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "runs/latest")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    #[arg(long, default_value_t = 0)]
    pub env_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// references.json for the normalized score; computed when omitted.
    #[arg(long)]
    pub references: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReferencesArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    #[arg(long, default_value_t = 0)]
    pub env_seed: u64,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "references.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BetaToyArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,1.0")]
    pub stds: Vec<f64>,
    #[arg(long, default_value_t = 5000)]
    pub n_actions: usize,
    /// True Gumbel noise scale
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "beta_toy.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metric CSV files; the first column is the x axis.
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "loss_q,q_mean")]
    pub columns: Vec<String>,
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}

fn parse_env(s: &str) -> std::result::Result<EnvId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_behavior(s: &str) -> std::result::Result<Behavior, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_algo(s: &str) -> std::result::Result<Algo, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn execute(cmd: Command) -> std::result::Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::References(a) => references_cmd(a),
        Command::BetaToy(a) => beta_toy(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> std::result::Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let env = Env::new(EnvSpec::new(a.env, a.env_seed))?;
    let d = data::generate(&env, a.behavior, a.n, a.seed)?;
    ensure_parent(&a.out)?;
    data::save(&d, &a.out)?;
    let t = d.transitions();
    let mean_r = t.iter().map(|t| t.r).sum::<f64>() / t.len() as f64;
    let terminals = t.iter().filter(|t| t.terminal).count();
    println!("wrote {} transitions to {}", d.len(), a.out.display());
    println!("env {} (seed {}), behavior {}, seed {}", a.env, a.env_seed, a.behavior, a.seed);
    println!("mean reward {mean_r:.6}, terminals {terminals}");
    println!("content hash {}", d.content_hash());
    Ok(())
}

/// Flags over the optional JSON config over the defaults.
pub fn resolve_config(a: &TrainArgs) -> std::result::Result<TrainConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! take {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag.clone() {
                cfg.$field = v;
            }
        )*};
    }
    take!(steps => steps, seed => seed, lambda => lambda, zeta => zeta, batch_size => batch_size,
          hidden => hidden_dims, eval_interval => eval_interval, eval_episodes => eval_episodes,
          log_interval => log_interval);
    if a.beta.is_some() {
        cfg.beta = a.beta;
    }
    match (a.algo, cfg.beta) {
        (Algo::Qql, Some(_)) => {
            return Err(CliError::Usage(
                "--beta cannot be used with --algo qql: QQL estimates its own temperature".into(),
            ))
        }
        (Algo::Xql, None) => return Err(CliError::Usage("--algo xql requires --beta".into())),
        (Algo::Bc, _) => cfg.beta = None,
        _ => {}
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> std::result::Result<(), CliError> {
    let cfg = resolve_config(&a)?;
    let flags = AblationFlags {
        value_regularization: !a.no_vr,
        conservative_estimation: !a.no_ce,
    };
    let dataset = data::load(&a.data)?;
    if let Some(id) = a.env {
        if id != dataset.env().id {
            return Err(Error::Schema(format!(
                "dataset {} was generated on '{}', not '{id}'",
                a.data.display(),
                dataset.env().id
            ))
            .into());
        }
    }
    let env = Env::new(dataset.env())?;

    if let Some(path) = &a.resume {
        let ckpt = Checkpoint::load(path)?;
        let r = crate::trainer::resume(ckpt, cfg.steps, &dataset, &env, &a.out_dir)?;
        println!(
            "resumed to step {}: final return {:.4} ± {:.4}",
            r.steps, r.final_eval.mean_return, r.final_eval.std_return
        );
        return Ok(());
    }

    match &a.seeds {
        Some(seeds) => {
            let report = multi_seed(&cfg, a.algo, &dataset, &env, flags, seeds, &a.out_dir)?;
            for run in &report.runs {
                match &run.result {
                    Ok(r) => println!(
                        "seed {}: final return {:.4}, best {:.4}",
                        run.seed, r.final_eval.mean_return, r.best_eval.mean_return
                    ),
                    Err(e) => println!("seed {}: failed: {e}", run.seed),
                }
            }
            let agg: serde_json::Map<String, serde_json::Value> = report
                .aggregate
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("plain numbers")))
                .collect();
            let path = a.out_dir.join("aggregate.json");
            fs::write(&path, serde_json::to_string_pretty(&agg).map_err(Error::from)? + "\n")
                .map_err(|e| Error::io(&path, e))?;
            if let Some(s) = report.aggregate.get("final_return") {
                println!("final return {:.4} ± {:.4} over {} seeds", s.mean, s.std, s.n);
            }
            if report.failures == report.runs.len() {
                return Err(Error::Precondition("every seed failed".into()).into());
            }
        }
        None => {
            let r = train(&cfg, a.algo, &dataset, &env, flags, &a.out_dir)?;
            println!(
                "{} seed {}: {} steps, final return {:.4} ± {:.4}, best {:.4} at step {}",
                r.algo,
                r.seed,
                r.steps,
                r.final_eval.mean_return,
                r.final_eval.std_return,
                r.best_eval.mean_return,
                r.best_eval.step
            );
            println!("outputs in {}", r.out_dir.display());
        }
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> std::result::Result<(), CliError> {
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let env = Env::new(EnvSpec::new(a.env, a.env_seed))?;
    if ckpt.agent.spec.env != env.spec() {
        return Err(Error::Schema(format!(
            "checkpoint {} was trained on {:?}, not {:?}",
            a.ckpt.display(),
            ckpt.agent.spec.env,
            env.spec()
        ))
        .into());
    }
    let nets = ckpt.agent.networks()?;
    let policy = GreedyPolicy::new(&env, nets.pi, &ckpt.agent.pi)?;
    let r = evaluate(&env, &policy, a.episodes, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let refs = match &a.references {
        Some(p) => References::load(p)?,
        None => References::compute(&env, 100, 0)?,
    };
    if refs.env != env.spec() {
        return Err(Error::Schema("references were computed for another environment".into()).into());
    }
    println!("return {:.4} ± {:.4} over {} episodes", r.mean, r.std, a.episodes);
    println!("normalized score {:.2}", refs.score(r.mean)?);
    Ok(())
}

fn references_cmd(a: ReferencesArgs) -> std::result::Result<(), CliError> {
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let env = Env::new(EnvSpec::new(a.env, a.env_seed))?;
    let r = References::compute(&env, a.episodes, a.seed)?;
    ensure_parent(&a.out)?;
    r.save(&a.out)?;
    println!(
        "{}: random {:.4}, expert {:.4} -> {}",
        a.env,
        r.random_return,
        r.expert_return,
        a.out.display()
    );
    Ok(())
}

fn beta_toy(a: BetaToyArgs) -> std::result::Result<(), CliError> {
    if a.n_actions < crate::evalkit::BETA_SCALE_MIN_ACTIONS {
        return Err(CliError::Usage(format!(
            "--n-actions must be at least {}",
            crate::evalkit::BETA_SCALE_MIN_ACTIONS
        )));
    }
    if !(a.beta > 0.0) || a.stds.iter().any(|s| !(*s >= 0.0)) {
        return Err(CliError::Usage("--beta must be positive and --stds non-negative".into()));
    }
    let rows = beta_scale_experiment(a.seed, &a.stds, a.n_actions, a.beta)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, beta_scale_csv(&rows)).map_err(|e| Error::io(&a.out, e))?;
    for r in &rows {
        println!(
            "std {:>5}: loc {:.4} scale {:.4} ks {:.4} p {:.4}",
            r.std,
            r.fit.location(),
            r.fit.scale(),
            r.gof.ks_statistic,
            r.gof.p_value
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> std::result::Result<(), CliError> {
    let tables = a
        .metrics
        .iter()
        .map(|p| plot::Table::read(p).map(|t| (p, t)))
        .collect::<Result<Vec<_>>>()?;
    let mut charts = Vec::with_capacity(a.columns.len());
    for col in &a.columns {
        let mut series = Vec::with_capacity(tables.len());
        for (path, t) in &tables {
            let idx = t.column(col).ok_or_else(|| {
                Error::Schema(format!("{} has no column '{col}'", path.display()))
            })?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            series.push(plot::Series {
                label,
                points: t.series(idx),
            });
        }
        charts.push((col.clone(), series));
    }
    ensure_parent(&a.out)?;
    fs::write(&a.out, plot::render(&charts)).map_err(|e| Error::io(&a.out, e))?;
    println!("wrote {} chart(s) to {}", charts.len(), a.out.display());
    Ok(())
}
