//! Fit a Gumbel law by maximum likelihood and check the fit with a KS test.

use qql::gumbel::{fit_mle, ks_test, GumbelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qql::Result<()> {
    let truth = GumbelParams::new(1.5, 0.7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [100, 1_000, 10_000, 100_000] {
        let xs = truth.sample(&mut rng, n);
        let fit = fit_mle(&xs)?;
        let gof = ks_test(&xs, &fit)?;
        println!(
            "n={n:>6}  loc {:.4}  scale {:.4}  mean {:.4}  KS {:.4}  p {:.3}",
            fit.location(),
            fit.scale(),
            fit.mean(),
            gof.ks_statistic,
            gof.p_value
        );
    }
    println!("true      loc {:.4}  scale {:.4}  mean {:.4}", truth.location(), truth.scale(), truth.mean());
    Ok(())
}
