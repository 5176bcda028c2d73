//! QQL against XQL at several fixed temperatures on sparse grid data.

use qql::agents::{AblationFlags, Algo, TrainConfig};
use qql::data::{generate, Behavior};
use qql::envs::{Env, EnvId, EnvSpec};
use qql::trainer::multi_seed;

fn main() -> qql::Result<()> {
    let env = Env::new(EnvSpec::new(EnvId::Grid5, 0))?;
    let data = generate(&env, Behavior::UniformRandom, 1_000, 1)?;
    let base = TrainConfig {
        hidden_dims: vec![64, 64],
        batch_size: 64,
        steps: 10_000,
        eval_interval: 10_000,
        eval_episodes: 50,
        ..TrainConfig::default()
    };
    let root = std::env::temp_dir().join("qql_vs_xql");
    let runs = [(Algo::Qql, None), (Algo::Xql, Some(1.0)), (Algo::Xql, Some(10.0))];
    for (algo, beta) in runs {
        let cfg = TrainConfig { beta, ..base.clone() };
        let name = match beta {
            Some(b) => format!("{algo}_beta{b}"),
            None => algo.to_string(),
        };
        let rep = multi_seed(&cfg, algo, &data, &env, AblationFlags::default(), &[0, 1, 2], &root.join(&name))?;
        let r = &rep.aggregate["final_return"];
        println!("{name:<14} final return {:.3} +- {:.3} over {} seeds", r.mean, r.std, r.n);
    }
    Ok(())
}
