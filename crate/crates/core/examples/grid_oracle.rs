//! Optimal values and greedy actions on the 5x5 grid.

use qql::envs::{solve_tabular, Env, EnvId, EnvSpec, GRID_GOAL, GRID_SIZE};

fn main() -> qql::Result<()> {
    let env = Env::new(EnvSpec::new(EnvId::Grid5, 0))?;
    let sol = solve_tabular(&env, 0.99)?.with_soft_values(0.1)?;
    let arrows = ['^', 'v', '<', '>'];
    println!("V* (soft values with beta 0.1 in brackets)");
    for r in 0..GRID_SIZE {
        let row: Vec<String> = (0..GRID_SIZE)
            .map(|c| {
                let s = r * GRID_SIZE + c;
                format!("{:.3} [{:.3}]", sol.v_star[s], sol.v_soft.as_ref().unwrap()[s])
            })
            .collect();
        println!("{}", row.join("  "));
    }
    println!("greedy actions");
    for r in 0..GRID_SIZE {
        let row: String = (0..GRID_SIZE)
            .map(|c| if (r, c) == GRID_GOAL { 'G' } else { arrows[sol.greedy_action(r * GRID_SIZE + c)] })
            .collect();
        println!("{row}");
    }
    Ok(())
}
