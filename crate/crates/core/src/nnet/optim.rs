use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

/// Adaptive-moment (Adam) optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` along `grad`.
    ///
    /// A non-finite gradient entry aborts before any state is touched.
    pub fn step(&mut self, params: &mut ParamVector, grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape {
                context: "optimizer step",
                expected: self.m.len(),
                got: if grad.len() != self.m.len() {
                    grad.len()
                } else {
                    params.len()
                },
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Polyak averaging: `target ← (1 - rate)·target + rate·online`.
pub fn soft_update(target: &mut ParamVector, online: &ParamVector, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::domain(format!("soft update rate must be in [0, 1], got {rate}")));
    }
    if target.len() != online.len() {
        return Err(Error::Shape {
            context: "soft update",
            expected: target.len(),
            got: online.len(),
        });
    }
    for (t, o) in target.as_mut_slice().iter_mut().zip(online.as_slice()) {
        *t = (1.0 - rate) * *t + rate * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ParamVector(vec![1.0, -2.0]);
        let mut opt = OptimizerState::new(2, 3e-4);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let lr = 3e-4;
        let mut p = ParamVector(vec![0.0, 0.0, 0.0]);
        let mut opt = OptimizerState::new(3, lr);
        opt.step(&mut p, &[2.5, -0.01, 100.0]).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps).
        for (x, g) in p.0.iter().zip([2.5f64, -0.01, 100.0]) {
            let want = -lr * g / (g.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut p = ParamVector(vec![1.0]);
        let mut opt = OptimizerState::new(1, 3e-4);
        for _ in 0..10_000 {
            let g = 2.0 * p.0[0];
            opt.step(&mut p, &[g]).unwrap();
        }
        assert!(p.0[0].abs() < 1e-2, "{}", p.0[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut p = ParamVector(vec![1.0, 1.0]);
        let mut opt = OptimizerState::new(2, 1e-3);
        let err = opt.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(opt.step, 0);
        assert_eq!(p.0, vec![1.0, 1.0]);
    }

    #[test]
    fn soft_update_endpoints() {
        let online = ParamVector(vec![1.0; 4]);
        let mut t = ParamVector::zeros(4);
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.0, vec![0.0; 4]);
        soft_update(&mut t, &online, 0.005).unwrap();
        assert!(t.0.iter().all(|&x| (x - 0.005).abs() < 1e-18));
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        assert!(soft_update(&mut t, &ParamVector::zeros(3), 0.5).is_err());
        assert!(soft_update(&mut t, &online, 1.5).is_err());
    }
}
