//! Train two short runs and draw their loss curves into one SVG.

use qql::agents::{AblationFlags, Algo, TrainConfig};
use qql::cli::plot::{render, Series, Table};
use qql::data::{generate, Behavior};
use qql::envs::{Env, EnvId, EnvSpec};
use qql::trainer::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = Env::new(EnvSpec::new(EnvId::Grid5, 0))?;
    let data = generate(&env, Behavior::EpsilonOptimal(0.5), 3_000, 0)?;
    let root = std::env::temp_dir().join("qql_plot");
    let mut tables = Vec::new();
    for (algo, beta) in [(Algo::Qql, None), (Algo::Xql, Some(2.0))] {
        let cfg = TrainConfig {
            hidden_dims: vec![32, 32],
            batch_size: 32,
            steps: 2_000,
            eval_interval: 1_000,
            log_interval: 10,
            beta,
            ..TrainConfig::default()
        };
        let dir = root.join(algo.as_str());
        train(&cfg, algo, &data, &env, AblationFlags::default(), &dir)?;
        tables.push((algo.to_string(), Table::read(&dir.join("metrics.csv"))?));
    }
    let charts: Vec<(String, Vec<Series>)> = ["loss_q", "loss_pi", "q_mean"]
        .iter()
        .map(|col| {
            let series = tables
                .iter()
                .filter_map(|(label, t)| {
                    t.column(col).map(|i| Series {
                        label: label.clone(),
                        points: t.series(i),
                    })
                })
                .collect();
            (col.to_string(), series)
        })
        .collect();
    let out = root.join("curves.svg");
    std::fs::write(&out, render(&charts))?;
    println!("wrote {}", out.display());
    Ok(())
}
