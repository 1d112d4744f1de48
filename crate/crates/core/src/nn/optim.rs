//! Adam with decoupled weight decay and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a finite non-negative number"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta", "moment coefficients must lie in [0, 1)"));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::config("optimizer", "eps must be positive, weight_decay and grad_clip non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub step: u64,
    decay: Vec<bool>,
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().flat_map(|g| g.data.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

impl OptimizerState {
    /// Fresh state for `params`; `decay[i]` selects weight decay for slot i.
    pub fn new(config: AdamWConfig, params: &[Mat], decay: Vec<bool>) -> Self {
        assert_eq!(params.len(), decay.len());
        let zeros = |p: &Mat| Mat::zeros(p.rows, p.cols);
        OptimizerState {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
            decay,
        }
    }

    pub fn decay_mask(&self) -> &[bool] {
        &self.decay
    }

    pub(crate) fn restore(config: AdamWConfig, m: Vec<Mat>, v: Vec<Mat>, step: u64, decay: Vec<bool>) -> Self {
        OptimizerState { config, m, v, step, decay }
    }

    /// Applies one update. Consumes the gradients; returns the pre-clip
    /// global gradient norm.
    pub fn step(&mut self, params: &mut [Mat], mut grads: Vec<Mat>) -> Result<f64> {
        assert_eq!(params.len(), grads.len());
        let norm = global_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient norm at optimizer step {}", self.step)));
        }
        let c = self.config;
        if c.grad_clip > 0.0 && norm > c.grad_clip {
            let s = c.grad_clip / norm;
            grads.iter_mut().flat_map(|g| g.data.iter_mut()).for_each(|x| *x *= s);
        }
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let wd = if self.decay[i] { c.weight_decay } else { 0.0 };
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = c.beta1 * m.data[k] + (1.0 - c.beta1) * gk;
                v.data[k] = c.beta2 * v.data[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + wd * p.data[k]);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_identity() {
        let mut params = vec![Mat::from_vec(1, 3, vec![1.0, -2.0, 0.5])];
        let before = params.clone();
        let mut opt = OptimizerState::new(AdamWConfig::default().with_lr(0.0), &params, vec![true]);
        opt.step(&mut params, vec![Mat::from_vec(1, 3, vec![0.3, 0.1, -9.0])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = AdamWConfig { weight_decay: 0.0, grad_clip: 0.0, ..AdamWConfig::default().with_lr(0.01) };
        let mut params = vec![Mat::from_vec(1, 2, vec![0.0, 0.0])];
        let mut opt = OptimizerState::new(cfg, &params, vec![false]);
        opt.step(&mut params, vec![Mat::from_vec(1, 2, vec![3.0, -0.5])]).unwrap();
        assert!((params[0].data[0] + 0.01).abs() < 1e-9);
        assert!((params[0].data[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn clipping_and_nan_guard() {
        let mut params = vec![Mat::zeros(1, 1)];
        let mut opt = OptimizerState::new(AdamWConfig::default(), &params, vec![false]);
        let n = opt.step(&mut params, vec![Mat::filled(1, 1, 10.0)]).unwrap();
        assert_eq!(n, 10.0);
        assert!(opt.step(&mut params, vec![Mat::filled(1, 1, f64::NAN)]).is_err());
    }
}
