//! Train QQL on uniform grid data and compare the greedy policy with the
//! optimal values from every start cell.

use qql::agents::{AblationFlags, Algo, TrainConfig};
use qql::data::{generate, Behavior};
use qql::envs::{grid_obs, solve_tabular, Env, EnvId, EnvSpec, EnvState, GRID_CELLS};
use qql::evalkit::{rollout, GreedyPolicy};
use qql::trainer::{train, Checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qql::Result<()> {
    let env = Env::new(EnvSpec::new(EnvId::Grid5, 0))?;
    let data = generate(&env, Behavior::UniformRandom, 10_000, 1)?;
    let cfg = TrainConfig {
        hidden_dims: vec![64, 64],
        batch_size: 64,
        steps: 20_000,
        eval_interval: 5_000,
        ..TrainConfig::default()
    };
    let out = std::env::temp_dir().join("qql_train_grid");
    let report = train(&cfg, Algo::Qql, &data, &env, AblationFlags::default(), &out)?;
    for e in &report.evals {
        println!("step {:>6}  return {:.3} +- {:.3}", e.step, e.mean_return, e.std_return);
    }

    let ckpt = Checkpoint::load(&out.join("ckpt_final.json"))?;
    let policy = GreedyPolicy::new(&env, ckpt.agent.networks()?.pi, &ckpt.agent.pi)?;
    let oracle = solve_tabular(&env, cfg.gamma)?;
    let (mut got, mut best) = (0.0, 0.0);
    for s in 0..GRID_CELLS - 1 {
        let start = EnvState { obs: grid_obs(s).to_vec(), t: 0 };
        got += rollout(&env, &policy, start, &mut ChaCha8Rng::seed_from_u64(0))?.discounted(cfg.gamma);
        best += oracle.v_star[s];
    }
    println!("discounted return over all starts: {:.4} of optimal {:.4}", got / 24.0, best / 24.0);
    println!("outputs in {}", out.display());
    Ok(())
}
