//! Scalar objectives: pinball loss, the XQL Gumbel loss, the QQL value
//! losses with mild generalization, the corrected Bellman target, the
//! `β(s)` estimator and both advantage weights.
//!
//! Each loss comes with its derivative with respect to the quantity the
//! corresponding network outputs, so the agents can backpropagate exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gumbel::{QuantileLevels, EULER_MASCHERONI};

/// Upper clamp applied to the standardized residual in [`xql_value_loss`].
pub const XQL_EXP_CLAMP: f64 = 5.0;

/// `(V_ψ1(s), V̂_ψ2(s))` read at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuePairReadout {
    pub v1: f64,
    pub v2: f64,
}

impl ValuePairReadout {
    pub fn new(v1: f64, v2: f64) -> Self {
        Self { v1, v2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeightsConfig {
    /// Policy constraint weight `ζ`.
    pub zeta: f64,
    /// Floor on `β(s)` inside the policy objective.
    pub beta_low: f64,
    pub weight_cap: f64,
}

impl Default for PolicyWeightsConfig {
    fn default() -> Self {
        Self {
            zeta: 1.0,
            beta_low: 0.1,
            weight_cap: 100.0,
        }
    }
}

impl PolicyWeightsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.beta_low > 0.0 && self.weight_cap > 0.0) {
            return Err(Error::domain(format!(
                "policy weights need zeta, beta_low, weight_cap > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Pinball loss `u·(τ - 1[u < 0])`.
pub fn quantile_loss(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// `d/du` of [`quantile_loss`] (the right derivative at `u = 0`).
pub fn quantile_loss_grad(u: f64, tau: f64) -> f64 {
    tau - if u < 0.0 { 1.0 } else { 0.0 }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("temperature must be positive, got {beta}")));
    }
    Ok(())
}

/// Gumbel regression loss `e^z - z - 1`, `z = (q - v)/β`, with `z` clamped
/// at [`XQL_EXP_CLAMP`] before use.
pub fn xql_value_loss(q: f64, v: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let z = ((q - v) / beta).min(XQL_EXP_CLAMP);
    Ok(z.exp() - z - 1.0)
}

/// `d/dv` of [`xql_value_loss`]; zero past the clamp.
pub fn xql_value_loss_grad_v(q: f64, v: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let z = (q - v) / beta;
    if z > XQL_EXP_CLAMP {
        return Ok(0.0);
    }
    Ok(-(z.exp() - 1.0) / beta)
}

/// Quantile levels used by the four terms of the regularized value losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueLossLevels {
    /// In-sample term of `V_ψ1` (α1).
    pub data_v1: f64,
    /// In-sample term of `V̂_ψ2` (α2).
    pub data_v2: f64,
    /// Policy-action term of `V_ψ1`.
    pub policy_v1: f64,
    /// Policy-action term of `V̂_ψ2`.
    pub policy_v2: f64,
}

impl ValueLossLevels {
    /// With conservative estimation the policy terms drop one level
    /// (α0, α1); without it they reuse the in-sample levels (α1, α2).
    pub fn new(levels: &QuantileLevels, conservative: bool) -> Self {
        let (policy_v1, policy_v2) = if conservative {
            (levels.alpha0, levels.alpha1)
        } else {
            (levels.alpha1, levels.alpha2)
        };
        Self {
            data_v1: levels.alpha1,
            data_v2: levels.alpha2,
            policy_v1,
            policy_v2,
        }
    }
}

/// Per-sample value losses and their derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueLossTerms {
    pub loss_psi1: f64,
    pub loss_psi2: f64,
    /// `∂loss_psi1/∂V_ψ1(s)` and `∂loss_psi1/∂V_ψ1(s')`.
    pub d_v1_s: f64,
    pub d_v1_next: f64,
    pub d_v2_s: f64,
    pub d_v2_next: f64,
}

/// QQL value losses with mild generalization and conservative estimation:
///
/// `loss_ψ1 = L(q_data - v1(s), α1) + λ·L(q_pi - v1(s'), α0)`
/// `loss_ψ2 = L(q_data - v2(s), α2) + λ·L(q_pi - v2(s'), α1)`
pub fn qql_value_losses(
    q_data: f64,
    q_pi: f64,
    at_s: ValuePairReadout,
    at_next: ValuePairReadout,
    lambda: f64,
    levels: &QuantileLevels,
) -> (f64, f64) {
    let t = qql_value_terms(
        q_data,
        q_pi,
        at_s,
        at_next,
        lambda,
        &ValueLossLevels::new(levels, true),
    );
    (t.loss_psi1, t.loss_psi2)
}

/// [`qql_value_losses`] with explicit levels, returning derivatives too.
pub fn qql_value_terms(
    q_data: f64,
    q_pi: f64,
    at_s: ValuePairReadout,
    at_next: ValuePairReadout,
    lambda: f64,
    lv: &ValueLossLevels,
) -> ValueLossTerms {
    let u1 = q_data - at_s.v1;
    let u2 = q_data - at_s.v2;
    let p1 = q_pi - at_next.v1;
    let p2 = q_pi - at_next.v2;
    let mut t = ValueLossTerms {
        loss_psi1: quantile_loss(u1, lv.data_v1),
        loss_psi2: quantile_loss(u2, lv.data_v2),
        d_v1_s: -quantile_loss_grad(u1, lv.data_v1),
        d_v1_next: 0.0,
        d_v2_s: -quantile_loss_grad(u2, lv.data_v2),
        d_v2_next: 0.0,
    };
    if lambda != 0.0 {
        t.loss_psi1 += lambda * quantile_loss(p1, lv.policy_v1);
        t.loss_psi2 += lambda * quantile_loss(p2, lv.policy_v2);
        t.d_v1_next = -lambda * quantile_loss_grad(p1, lv.policy_v1);
        t.d_v2_next = -lambda * quantile_loss_grad(p2, lv.policy_v2);
    }
    t
}

/// Regression target for `Q_θ(s, a)`:
/// `r + γ·(1 - terminal)·V̂(s') - (V̂(s) - V(s))`.
pub fn bellman_target(r: f64, v2_next: f64, v1_s: f64, v2_s: f64, gamma: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { gamma * v2_next };
    r + bootstrap - (v2_s - v1_s)
}

/// `β(s) = (V̂(s) - V(s))/ω`. On the policy path the absolute value is taken
/// and floored at `beta_low`; elsewhere the raw value is returned.
pub fn beta_from_values(readout: ValuePairReadout, beta_low: f64, for_policy: bool) -> f64 {
    let raw = (readout.v2 - readout.v1) / EULER_MASCHERONI;
    if for_policy {
        raw.abs().max(beta_low)
    } else {
        raw
    }
}

/// Temperature-free advantage weight
/// `min(exp((q - v2)/(ζβ) + (q - v1)/β), cap)` with the policy-path `β`.
pub fn qql_awr_weight(q: f64, readout: ValuePairReadout, cfg: &PolicyWeightsConfig) -> f64 {
    let beta = beta_from_values(readout, cfg.beta_low, true);
    let e = (q - readout.v2) / (cfg.zeta * beta) + (q - readout.v1) / beta;
    // Comparing in log space keeps the cap exact when exp(e) overflows.
    if e >= cfg.weight_cap.ln() {
        cfg.weight_cap
    } else {
        e.exp()
    }
}

/// XQL advantage weight `min(exp((q - v)/β), cap)`.
pub fn xql_awr_weight(q: f64, v: f64, beta: f64, weight_cap: f64) -> Result<f64> {
    check_beta(beta)?;
    let e = (q - v) / beta;
    Ok(if e >= weight_cap.ln() { weight_cap } else { e.exp() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gumbel::quantile_levels;

    const OMEGA: f64 = EULER_MASCHERONI;

    #[test]
    fn pinball_examples() {
        assert!((quantile_loss(1.0, 0.7) - 0.7).abs() < 1e-15);
        assert!((quantile_loss(-2.0, 0.7) - 0.6).abs() < 1e-15);
        assert_eq!(quantile_loss(0.0, 0.3), 0.0);
        for u in [-3.0, -0.1, 0.0, 0.2, 5.0] {
            for tau in [0.0, 0.25, 0.5, 1.0] {
                assert!(quantile_loss(u, tau) >= 0.0);
            }
        }
    }

    #[test]
    fn xql_loss_examples() {
        assert_eq!(xql_value_loss(1.3, 1.3, 2.0).unwrap(), 0.0);
        assert!((xql_value_loss(1.0, 0.0, 1.0).unwrap() - 0.718_281_828_459_045).abs() < 1e-12);
        for i in -50..=50 {
            let z = i as f64 / 10.0;
            let l = xql_value_loss(z, 0.0, 1.0).unwrap();
            assert!(l >= 0.0);
            if i != 0 {
                assert!(l > 0.0);
            }
        }
        assert!(xql_value_loss(0.0, 0.0, 0.0).is_err());
        assert!(xql_value_loss_grad_v(0.0, 0.0, -1.0).is_err());
        // Beyond the clamp the loss is flat.
        assert_eq!(xql_value_loss_grad_v(100.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(xql_value_loss(100.0, 0.0, 1.0).unwrap(), xql_value_loss(6.0, 0.0, 1.0).unwrap());
    }

    #[test]
    fn xql_gradient_matches_difference_quotient() {
        for (q, v, b) in [(0.4, 0.1, 0.7), (-2.0, 0.5, 1.3), (1.0, 0.9, 0.05)] {
            let h = 1e-6;
            let fd = (xql_value_loss(q, v + h, b).unwrap() - xql_value_loss(q, v - h, b).unwrap()) / (2.0 * h);
            let g = xql_value_loss_grad_v(q, v, b).unwrap();
            assert!((fd - g).abs() < 1e-5 * g.abs().max(1.0), "{fd} {g}");
        }
    }

    #[test]
    fn value_losses_examples() {
        let lv = quantile_levels();
        let r = ValuePairReadout::new(0.3, 0.3);
        let rn = ValuePairReadout::new(-0.2, -0.2);
        assert_eq!(qql_value_losses(0.3, -0.2, r, rn, 1.0, &lv), (0.0, 0.0));

        let (l1, _) = qql_value_losses(1.0, -1.0, ValuePairReadout::new(0.0, 0.0), ValuePairReadout::new(0.0, 0.0), 1.0, &lv);
        assert!((l1 - 1.202_496_560_503_580_7).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_reduces_to_in_sample_terms() {
        let lv = quantile_levels();
        let (q, qp) = (0.8, 3.0);
        let s = ValuePairReadout::new(0.5, 1.1);
        let n = ValuePairReadout::new(-1.0, 2.0);
        let (l1, l2) = qql_value_losses(q, qp, s, n, 0.0, &lv);
        assert_eq!(l1, quantile_loss(q - s.v1, lv.alpha1));
        assert_eq!(l2, quantile_loss(q - s.v2, lv.alpha2));
    }

    #[test]
    fn non_conservative_levels_shift_up() {
        let lv = quantile_levels();
        let ce = ValueLossLevels::new(&lv, true);
        let no = ValueLossLevels::new(&lv, false);
        assert_eq!((ce.policy_v1, ce.policy_v2), (lv.alpha0, lv.alpha1));
        assert_eq!((no.policy_v1, no.policy_v2), (lv.alpha1, lv.alpha2));
        assert_eq!((ce.data_v1, ce.data_v2), (no.data_v1, no.data_v2));
    }

    #[test]
    fn value_term_derivatives_match_difference_quotients() {
        let lv = ValueLossLevels::new(&quantile_levels(), true);
        let s = ValuePairReadout::new(0.2, 0.9);
        let n = ValuePairReadout::new(0.4, 0.1);
        let (q, qp, lam) = (0.5, 0.3, 0.7);
        let t = qql_value_terms(q, qp, s, n, lam, &lv);
        let h = 1e-7;
        let l1 = |a: f64, b: f64| qql_value_terms(q, qp, ValuePairReadout::new(a, s.v2), ValuePairReadout::new(b, n.v2), lam, &lv).loss_psi1;
        let l2 = |a: f64, b: f64| qql_value_terms(q, qp, ValuePairReadout::new(s.v1, a), ValuePairReadout::new(n.v1, b), lam, &lv).loss_psi2;
        assert!(((l1(s.v1 + h, n.v1) - l1(s.v1 - h, n.v1)) / (2.0 * h) - t.d_v1_s).abs() < 1e-6);
        assert!(((l1(s.v1, n.v1 + h) - l1(s.v1, n.v1 - h)) / (2.0 * h) - t.d_v1_next).abs() < 1e-6);
        assert!(((l2(s.v2 + h, n.v2) - l2(s.v2 - h, n.v2)) / (2.0 * h) - t.d_v2_s).abs() < 1e-6);
        assert!(((l2(s.v2, n.v2 + h) - l2(s.v2, n.v2 - h)) / (2.0 * h) - t.d_v2_next).abs() < 1e-6);
    }

    #[test]
    fn bellman_target_examples() {
        assert!((bellman_target(1.0, 2.0, 1.0, 1.5, 0.99, false) - 2.48).abs() < 1e-12);
        assert_eq!(bellman_target(1.0, 2.0, 1.0, 1.5, 0.99, true), 0.5);
        assert_eq!(bellman_target(1.0, 2.0, 1.0, 1.5, 0.0, false), 0.5);
    }

    #[test]
    fn beta_estimator_examples() {
        let r = ValuePairReadout::new(1.0, 1.0 + OMEGA);
        assert!((beta_from_values(r, 0.1, true) - 1.0).abs() < 1e-15);
        assert_eq!(beta_from_values(ValuePairReadout::new(2.0, 2.0), 0.1, true), 0.1);
        let neg = ValuePairReadout::new(1.0, 1.0 - OMEGA);
        assert!((beta_from_values(neg, 0.1, true) - 1.0).abs() < 1e-15);
        assert!((beta_from_values(neg, 0.1, false) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn qql_weight_examples() {
        let cfg = PolicyWeightsConfig::default();
        let r = ValuePairReadout::new(0.0, OMEGA);
        assert!((qql_awr_weight(OMEGA, r, &cfg) - 1.781_072_417_990_198).abs() < 1e-12);
        assert!((qql_awr_weight(0.0, r, &cfg) - 0.561_459_483_566_885_2).abs() < 1e-12);
        let clipped = ValuePairReadout::new(0.0, 0.02);
        assert!((qql_awr_weight(0.05, clipped, &cfg) - 2.225_540_928_492_467_6).abs() < 1e-12);
        assert_eq!(qql_awr_weight(1e6, r, &cfg), cfg.weight_cap);
    }

    #[test]
    fn xql_weight_examples() {
        assert_eq!(xql_awr_weight(0.4, 0.4, 2.0, 100.0).unwrap(), 1.0);
        assert!((xql_awr_weight(2.0, 0.0, 2.0, 100.0).unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(xql_awr_weight(100.0, 0.0, 1.0, 100.0).unwrap(), 100.0);
        assert!(xql_awr_weight(0.0, 0.0, 0.0, 100.0).is_err());
    }
}
