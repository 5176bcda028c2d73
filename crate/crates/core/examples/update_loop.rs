//! Drive the QQL update by hand: sample batches on the batch stream, step the
//! agent, and print a few training signals.

use qql::agents::{qql_update, AblationFlags, AgentSpec, AgentState, Batch, TrainConfig};
use qql::data::{generate, Behavior};
use qql::envs::{Env, EnvId, EnvSpec};
use qql::trainer::{stream_rng, Stream};

fn main() -> qql::Result<()> {
    let env = Env::new(EnvSpec::new(EnvId::GumbelBandit, 0))?;
    let data = generate(&env, Behavior::UniformRandom, 2_000, 0)?;
    let cfg = TrainConfig {
        hidden_dims: vec![32, 32],
        batch_size: 64,
        ..TrainConfig::default()
    };
    let spec = AgentSpec::for_env(&env, &cfg.hidden_dims);
    let mut agent = AgentState::new(spec, &cfg, &mut stream_rng(cfg.seed, Stream::Init))?;
    let mut batch_rng = stream_rng(cfg.seed, Stream::Batch);
    let mut policy_rng = stream_rng(cfg.seed, Stream::PolicySample);
    for step in 0..3_000 {
        let batch = Batch::new(&env, &data.sample_batch(cfg.batch_size, &mut batch_rng)?)?;
        let (next, m) = qql_update(&agent, &batch, &cfg, AblationFlags::default(), &mut policy_rng)?;
        agent = next;
        if step % 500 == 0 {
            println!(
                "step {step:>5}  loss_q {:.5}  loss_pi {:+.4}  beta {:.4}  weight {:.3}",
                m.loss_q, m.loss_pi, m.beta_mean, m.weight_mean
            );
        }
    }
    let v = agent.values(&env, &data.transitions()[0].s)?;
    println!("V {:.4}  V-hat {:.4}", v.v1, v.v2);
    Ok(())
}
