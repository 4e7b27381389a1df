//! Rectified Adam.
//!
//! With `rho_inf = 2 / (1 - beta2) - 1` and
//! `rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t)`, a step applies the
//! variance-rectified adaptive update when `rho_t > 4` and a plain momentum
//! step with the bias-corrected first moment otherwise.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl RAdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps >= 0.0)
        {
            return Err(Error::Config(format!("invalid RAdam settings {self:?}")));
        }
        Ok(())
    }

    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// Length of the approximated simple moving average at step `t >= 1`.
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powi(t as i32);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification term, or `None` when step `t` takes the momentum branch.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho_t = self.rho(t);
        if rho_t > 4.0 {
            let rho_inf = self.rho_inf();
            Some(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        }
    }
}

/// Optimizer slots: first and second moments per parameter and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdam {
    pub cfg: RAdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl RAdam {
    pub fn new(cfg: RAdamConfig, sizes: &[usize]) -> Self {
        RAdam {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// Applies one update in place. Non-finite gradients abort before any
    /// state changes.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape("parameter/gradient/slot counts differ".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i}: size mismatch")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient {} at tensor {i} element {j} (step {})",
                    g[j],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step;
        let RAdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        let rect = self.cfg.rectification(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                match rect {
                    Some(r) => {
                        let adaptive = bc2.sqrt() / (v[k].sqrt() + eps);
                        p[k] -= lr * r * m_hat * adaptive;
                    }
                    None => p[k] -= lr * m_hat,
                }
            }
        }
        Ok(())
    }
}
