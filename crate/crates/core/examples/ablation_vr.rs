//! Switch off value regularization or conservative estimation and watch the
//! learned Q values and the gap between the two value heads.

use qql::agents::{AblationFlags, Algo, TrainConfig};
use qql::data::{generate, Behavior};
use qql::envs::{Env, EnvId, EnvSpec};
use qql::trainer::train;

fn main() -> qql::Result<()> {
    let env = Env::new(EnvSpec::new(EnvId::Grid5, 0))?;
    let data = generate(&env, Behavior::UniformRandom, 10_000, 1)?;
    let cfg = TrainConfig {
        hidden_dims: vec![64, 64],
        batch_size: 64,
        steps: 20_000,
        eval_interval: 20_000,
        log_interval: 100,
        ..TrainConfig::default()
    };
    let root = std::env::temp_dir().join("qql_ablation");
    for (name, vr, ce) in [("full", true, true), ("no-vr", false, true), ("no-ce", true, false)] {
        let flags = AblationFlags {
            value_regularization: vr,
            conservative_estimation: ce,
        };
        let rep = train(&cfg, Algo::Qql, &data, &env, flags, &root.join(name))?;
        let m = rep.last_metrics.expect("at least one logged step");
        println!(
            "{name:<6} return {:.3}  q_mean {:.4}  v1 {:.4}  v2 {:.4}  beta {:.4}",
            rep.final_eval.mean_return, m.q_mean, m.v1_mean, m.v2_mean, m.beta_mean
        );
    }
    Ok(())
}
