//! Minimizing the pinball loss over a constant recovers a quantile of the
//! data. For estimates `q* - g` with Gumbel `g`, the alpha1 level lands on
//! `q*` and the gap to the alpha2 level measures the noise scale.

use qql::gumbel::{quantile_levels, GumbelParams, EULER_MASCHERONI};
use qql::losses::quantile_loss;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn minimize(xs: &[f64], tau: f64) -> f64 {
    let risk = |v: f64| xs.iter().map(|x| quantile_loss(x - v, tau)).sum::<f64>();
    let (mut lo, mut hi) = (-10.0, 10.0);
    while hi - lo > 1e-7 {
        let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if risk(a) < risk(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

fn main() -> qql::Result<()> {
    let (q_star, beta) = (2.0, 1.3);
    let noise = GumbelParams::new(0.0, beta)?;
    // Noisy estimates that fall short of the true value by Gumbel noise.
    let qs: Vec<f64> = noise
        .sample(&mut ChaCha8Rng::seed_from_u64(1), 50_000)
        .into_iter()
        .map(|g| q_star - g)
        .collect();
    let lv = quantile_levels();
    let mut found = Vec::new();
    for (name, tau) in [("alpha0", lv.alpha0), ("alpha1", lv.alpha1), ("alpha2", lv.alpha2)] {
        let v = minimize(&qs, tau);
        found.push(v);
        println!("{name} = {tau:.6}: pinball minimizer {v:.4}");
    }
    println!("alpha1 level recovers q* = {q_star}: {:.4}", found[1]);
    println!("alpha2 level sits at q* + omega*beta = {:.4}: {:.4}", q_star + EULER_MASCHERONI * beta, found[2]);
    println!("scale from the gap: {:.4} (true {beta})", (found[2] - found[1]) / EULER_MASCHERONI);
    Ok(())
}
