//! Fit a Gumbel law to the maximum of noisy bandit estimates and test the
//! fit, for several noise levels.

use qql::evalkit::{beta_scale_csv, beta_scale_experiment};

fn main() -> qql::Result<()> {
    let rows = beta_scale_experiment(0, &[0.1, 0.3, 0.5, 1.0], 5_000, 1.0)?;
    print!("{}", beta_scale_csv(&rows));
    for r in &rows {
        let verdict = if r.gof.p_value > 0.05 { "not rejected" } else { "rejected" };
        println!("std {:.1}: scale {:.3}, Gumbel {verdict} at 5%", r.std, r.fit.scale());
    }
    Ok(())
}
