//! Interrupt a run, resume it from the checkpoint, and confirm it ends where
//! an uninterrupted run does.

use qql::agents::{AblationFlags, Algo, TrainConfig};
use qql::data::{generate, Behavior};
use qql::envs::{Env, EnvId, EnvSpec};
use qql::trainer::{resume, train, Checkpoint};

fn main() -> qql::Result<()> {
    let env = Env::new(EnvSpec::new(EnvId::PointMass, 0))?;
    let data = generate(&env, Behavior::GaussianNoisyOptimal(0.3), 5_000, 2)?;
    let cfg = TrainConfig {
        hidden_dims: vec![32, 32],
        batch_size: 32,
        steps: 1_000,
        eval_interval: 250,
        ..TrainConfig::default()
    };
    let root = std::env::temp_dir().join("qql_resume");
    let straight = train(&cfg, Algo::Qql, &data, &env, AblationFlags::default(), &root.join("straight"))?;

    let half = TrainConfig { steps: 500, ..cfg.clone() };
    train(&half, Algo::Qql, &data, &env, AblationFlags::default(), &root.join("first_half"))?;
    let ckpt = Checkpoint::load(&root.join("first_half/ckpt_final.json"))?;
    let resumed = resume(ckpt, cfg.steps, &data, &env, &root.join("second_half"))?;

    let a = Checkpoint::load(&root.join("straight/ckpt_final.json"))?;
    let b = Checkpoint::load(&root.join("second_half/ckpt_final.json"))?;
    println!("straight final return {:.6}", straight.final_eval.mean_return);
    println!("resumed  final return {:.6}", resumed.final_eval.mean_return);
    println!("agent states identical: {}", a.agent == b.agent);
    Ok(())
}
