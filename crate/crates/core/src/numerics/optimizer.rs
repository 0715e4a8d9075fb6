use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the first moment accumulates gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumRule {
    /// `m_t = beta m_{t-1} + lr * g`, with the learning rate inside the
    /// recurrence.
    PaperAdam,
    /// `m_t = beta m_{t-1} + (1 - beta) g`.
    StandardAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    /// First-moment decay.
    pub beta: f64,
    /// Second-moment decay.
    pub gamma: f64,
    pub lr: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied after the moment update.
    pub weight_decay: f64,
    pub rule: MomentumRule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta: 0.9,
            gamma: 0.999,
            lr: 3e-4,
            eps: 1e-8,
            weight_decay: 0.0,
            rule: MomentumRule::PaperAdam,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparams(msg));
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1)", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps {} must be positive", self.eps));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be non-negative", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub weights: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(weights: Vec<f64>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let n = weights.len();
        Ok(OptimizerState {
            step: 0,
            weights,
            m: vec![0.0; n],
            v: vec![0.0; n],
            config,
        })
    }

    /// Applies one update in place with learning rate `lr`.
    pub fn apply(&mut self, gradient: &[f64], lr: f64) -> Result<()> {
        if gradient.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: gradient.len(),
            });
        }
        if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidHyperparams(format!("lr {lr} must be non-negative")));
        }
        let AdamConfig {
            beta,
            gamma,
            eps,
            weight_decay,
            rule,
            ..
        } = self.config;
        let t = self.step + 1;
        let exponent = i32::try_from(t).unwrap_or(i32::MAX);
        let m_correction = 1.0 - beta.powi(exponent);
        let v_correction = 1.0 - gamma.powi(exponent);
        let m_gain = match rule {
            MomentumRule::PaperAdam => lr,
            MomentumRule::StandardAdam => 1.0 - beta,
        };
        for (((w, m), v), &g) in self
            .weights
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(gradient)
        {
            *m = beta * *m + m_gain * g;
            *v = gamma * *v + (1.0 - gamma) * g * g;
            let m_hat = *m / m_correction;
            let v_hat = *v / v_correction;
            *w -= lr / (v_hat + eps).sqrt() * m_hat;
            if weight_decay > 0.0 {
                *w -= lr * weight_decay * *w;
            }
        }
        self.step = t;
        Ok(())
    }
}

/// Returns the state after one update; the input state is left untouched.
pub fn optimizer_step(state: &OptimizerState, gradient: &[f64], lr: f64) -> Result<OptimizerState> {
    let mut next = state.clone();
    next.apply(gradient, lr)?;
    Ok(next)
}
