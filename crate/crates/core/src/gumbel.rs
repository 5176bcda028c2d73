//! Gumbel distribution machinery: CDF, quantile function, sampling,
//! maximum-likelihood fitting and a one-sample Kolmogorov–Smirnov test.
//!
//! The Gumbel law `G(loc, scale)` has CDF `exp(-exp(-(x - loc) / scale))`
//! and mean `loc + ω·scale`, where `ω` is the Euler–Mascheroni constant.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The Euler–Mascheroni constant `ω`.
pub const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_860_606_512_090_082;

/// Returns the Euler–Mascheroni constant.
pub const fn euler_mascheroni() -> f64 {
    EULER_MASCHERONI
}

/// Location/scale pair of a Gumbel (maximum) distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelParams {
    location: f64,
    scale: f64,
}

impl GumbelParams {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::domain(format!(
                "Gumbel scale must be positive and finite, got {scale}"
            )));
        }
        if !location.is_finite() {
            return Err(Error::domain(format!(
                "Gumbel location must be finite, got {location}"
            )));
        }
        Ok(Self { location, scale })
    }

    /// The standard Gumbel law `G(0, 1)`.
    pub fn standard() -> Self {
        Self {
            location: 0.0,
            scale: 1.0,
        }
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.location + EULER_MASCHERONI * self.scale
    }

    pub fn std_dev(&self) -> f64 {
        self.scale * std::f64::consts::PI / 6f64.sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        (-(-z).exp()).exp()
    }

    /// Inverse CDF: `loc - scale * ln(-ln(prob))`.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::domain(format!(
                "quantile probability must lie in (0, 1), got {prob}"
            )));
        }
        Ok(self.location - self.scale * (-prob.ln()).ln())
    }

    /// Draws `n` i.i.d. samples by inverse transform of open-interval uniforms.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.location - self.scale * (-u.ln()).ln()
    }
}

/// The quantile levels at which the conservative value, the soft value and
/// the expected optimal value sit on the CDF of `Q(s, ·)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileLevels {
    /// `1 - exp(-exp(-ω))`
    pub alpha0: f64,
    /// `1 - exp(-1)`
    pub alpha1: f64,
    /// `1 - exp(-exp(ω))`
    pub alpha2: f64,
}

impl QuantileLevels {
    pub fn standard() -> Self {
        let w = EULER_MASCHERONI;
        Self {
            alpha0: 1.0 - (-(-w).exp()).exp(),
            alpha1: 1.0 - (-1.0f64).exp(),
            alpha2: 1.0 - (-w.exp()).exp(),
        }
    }
}

impl Default for QuantileLevels {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn quantile_levels() -> QuantileLevels {
    QuantileLevels::standard()
}

/// Outcome of a one-sample goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub ks_statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

const MLE_MAX_ITER: usize = 200;
const MLE_TOL: f64 = 1e-9;
const SCALE_FLOOR: f64 = 1e-12;
const SCALE_CEIL: f64 = 1e12;

/// Maximum-likelihood fit of a Gumbel law.
///
/// The scale solves `β = mean(x) - Σ xᵢ e^(-xᵢ/β) / Σ e^(-xᵢ/β)` by Newton
/// iteration started from the method-of-moments estimate; an iterate that
/// leaves `(1e-12, 1e12)` switches the solver to bisection on the same
/// score. The location then follows in closed form.
pub fn fit_mle(samples: &[f64]) -> Result<GumbelParams> {
    if samples.len() < 10 {
        return Err(Error::Precondition(format!(
            "Gumbel MLE needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!("non-finite sample {bad}")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    // Centred data keeps the weights well-scaled regardless of location.
    let centred: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let var = centred.iter().map(|y| y * y).sum::<f64>() / (n - 1.0);
    let (min, max) = centred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    if var <= 0.0 || max - min <= 0.0 {
        return Err(Error::DegenerateSample(
            "all samples are equal; scale collapses to zero".into(),
        ));
    }

    let score = ScaleScore { ys: &centred, min };
    let mut beta = var.sqrt() * 6f64.sqrt() / std::f64::consts::PI;
    let mut converged = false;
    for _ in 0..MLE_MAX_ITER {
        let (f, df) = score.eval(beta);
        let next = beta - f / df;
        if !next.is_finite() || next <= SCALE_FLOOR || next >= SCALE_CEIL {
            beta = score.bisect(-min, beta)?;
            converged = true;
            break;
        }
        let step = (next - beta).abs();
        beta = next;
        if step < MLE_TOL * beta.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence { last: beta });
    }

    let sum_w: f64 = centred.iter().map(|y| (-(y - min) / beta).exp()).sum();
    let location = mean + min - beta * (sum_w / n).ln();
    GumbelParams::new(location, beta)
}

/// Score function of the scale equation over centred data.
struct ScaleScore<'a> {
    ys: &'a [f64],
    min: f64,
}

impl ScaleScore<'_> {
    /// Returns `(f(β), f'(β))` with `f(β) = β + E_w[y]` (the centred data
    /// has zero mean) and `f'(β) = 1 + Var_w[y] / β²`.
    fn eval(&self, beta: f64) -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &y in self.ys {
            let w = (-(y - self.min) / beta).exp();
            s0 += w;
            s1 += w * y;
            s2 += w * y * y;
        }
        let ew = s1 / s0;
        let varw = (s2 / s0 - ew * ew).max(0.0);
        (beta + ew, 1.0 + varw / (beta * beta))
    }

    fn bisect(&self, neg_min: f64, hint: f64) -> Result<f64> {
        let mut lo = SCALE_FLOOR;
        // f(β) ≥ β + min(y), so any β above -min(y) has a positive score.
        let mut hi = (neg_min + 1.0).max(hint.abs().min(SCALE_CEIL));
        while self.eval(hi).0 <= 0.0 {
            hi *= 2.0;
            if hi >= SCALE_CEIL {
                return Err(Error::Convergence { last: hi });
            }
        }
        if self.eval(lo).0 > 0.0 {
            return Err(Error::Convergence { last: lo });
        }
        for _ in 0..MLE_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < MLE_TOL * mid.max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
        }
        Err(Error::Convergence {
            last: 0.5 * (lo + hi),
        })
    }
}

/// One-sample Kolmogorov–Smirnov test of `samples` against `params`.
pub fn ks_test(samples: &[f64], params: &GumbelParams) -> Result<GofReport> {
    if samples.len() < 10 {
        return Err(Error::Precondition(format!(
            "KS test needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let stat = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = params.cdf(x);
            let above = (i as f64 + 1.0) / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0f64, f64::max)
        .clamp(0.0, 1.0);
    Ok(GofReport {
        ks_statistic: stat,
        p_value: kolmogorov_survival(n.sqrt() * stat),
        n: sorted.len(),
    })
}

const KOLMOGOROV_TERMS: usize = 100;

/// Asymptotic Kolmogorov survival function `P(K > λ)`.
///
/// Large `λ` uses the alternating series `2 Σ (-1)^(k-1) e^(-2k²λ²)`; small
/// `λ` uses the Jacobi-transformed series for the CDF, which converges fast
/// where the alternating one does not.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        let pi2 = std::f64::consts::PI.powi(2);
        let cdf: f64 = (1..=KOLMOGOROV_TERMS)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (-odd * odd * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        1.0 - cdf
    } else {
        2.0 * (1..=KOLMOGOROV_TERMS)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}
