//! Generate an offline dataset, save it as JSON lines, and read it back.

use qql::data::{self, Behavior};
use qql::envs::{Env, EnvId, EnvSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("qql_generate_dataset");
    std::fs::create_dir_all(&dir)?;
    for (id, behavior) in [
        (EnvId::Grid5, Behavior::EpsilonOptimal(0.3)),
        (EnvId::PointMass, Behavior::GaussianNoisyOptimal(0.5)),
        (EnvId::GumbelBandit, Behavior::UniformRandom),
    ] {
        let env = Env::new(EnvSpec::new(id, 0))?;
        let d = data::generate(&env, behavior, 5_000, 0)?;
        let path = dir.join(format!("{id}.jsonl"));
        data::save(&d, &path)?;
        let back = data::load(&path)?;
        assert_eq!(back.content_hash(), d.content_hash());
        let mean_r = d.transitions().iter().map(|t| t.r).sum::<f64>() / d.len() as f64;
        let terminals = d.transitions().iter().filter(|t| t.terminal).count();
        println!(
            "{id} {behavior} n={} mean reward {mean_r:+.4} terminals {terminals:>5}  {}",
            d.len(),
            path.display()
        );
    }
    Ok(())
}
