//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of `step` calls so far.
    pub step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
        })
    }

    /// Updates every parameter, then zeroes all gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step_where(store, |_| true);
    }

    /// Updates only the parameters selected by `active`, then zeroes all
    /// gradients. Unselected parameters and their moments are left
    /// untouched, and bias correction uses each parameter's own update count.
    pub fn step_where(&mut self, store: &mut ParamStore, active: impl Fn(ParamId) -> bool) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        for (id, p) in store.iter_mut() {
            if active(id) {
                p.steps += 1;
                let bc1 = 1.0 - beta1.powf(p.steps as f64);
                let bc2 = 1.0 - beta2.powf(p.steps as f64);
                let g = p.grad.data();
                let m = p.m.data_mut();
                for (mi, gi) in m.iter_mut().zip(g) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                }
                let v = p.v.data_mut();
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                }
                let (m, v) = (p.m.data(), p.v.data());
                for ((x, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *x -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            p.grad.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Param;
    use crate::nn::tensor::Tensor;

    fn store_with(values: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .insert(Param::new(
                "p",
                Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
            ))
            .unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, id) = store_with(&[1.0, -2.0, 3.0]);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&mut s);
        assert_eq!(s.get(id).value.data(), &[1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let (mut s, id) = store_with(&[0.0, 0.0, 0.0]);
        s.get_mut(id).grad = Tensor::new(vec![3], vec![0.3, -7.0, 1e-3]).unwrap();
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg).unwrap();
        adam.step(&mut s);
        // m̂ = g, v̂ = g², so the update is lr · g / (|g| + eps).
        for (x, g) in s.get(id).value.data().iter().zip([0.3, -7.0, 1e-3]) {
            let expected = -cfg.lr * g / (f64::abs(g) + cfg.eps);
            assert!((x - expected).abs() < 1e-18, "{x} vs {expected}");
            assert!((x.abs() - cfg.lr).abs() < 1e-8);
        }
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let (mut s, id) = store_with(&[1.0]);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut prev = 1.0;
        for _ in 0..2 {
            s.get_mut(id).grad = Tensor::new(vec![1], vec![2.5]).unwrap();
            adam.step(&mut s);
            let now = s.get(id).value.item();
            assert!(now < prev);
            prev = now;
        }
        // With a constant gradient both bias-corrected steps equal lr.
        assert!((prev - (1.0 - 2.0e-4)).abs() < 1e-10);
    }

    #[test]
    fn inactive_params_are_bitwise_untouched() {
        let mut s = ParamStore::new();
        let a = s.insert(Param::new("a", Tensor::full(&[2], 1.0))).unwrap();
        let b = s.insert(Param::new("b", Tensor::full(&[2], 1.0))).unwrap();
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        for _ in 0..3 {
            s.get_mut(a).grad.fill(1.0);
            s.get_mut(b).grad.fill(1.0);
            adam.step_where(&mut s, |id| id == a);
        }
        assert_eq!(s.get(b).value.data(), &[1.0, 1.0]);
        assert_eq!(s.get(b).steps, 0);
        assert_eq!(s.get(a).steps, 3);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(bad).is_err());
    }
}
