use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

/// A trainable tensor together with its momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub momentum_buffer: Tensor,
    pub frozen: bool,
    /// Bias vectors may be exempted from weight decay.
    pub is_bias: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, is_bias: bool) -> Self {
        let momentum_buffer = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            momentum_buffer,
            frozen: false,
            is_bias,
        }
    }

    pub fn reset_momentum(&mut self) {
        self.momentum_buffer = Tensor::zeros(self.value.shape().to_vec());
    }
}

/// SGD-with-momentum hyperparameters and the step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f32,
    pub decay_bias: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_epoch: 30,
            lr_decay_factor: 0.1,
            decay_bias: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must lie in (0,1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_epoch == 0 {
            return Err(Error::Config("lr_decay_epoch must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch: the base rate for epochs
    /// `1..=lr_decay_epoch`, multiplied by the decay factor for each further
    /// block of `lr_decay_epoch` epochs.
    pub fn lr_at_epoch(&self, epoch: usize) -> f32 {
        let drops = epoch.saturating_sub(1) / self.lr_decay_epoch;
        let mut lr = self.learning_rate as f64;
        for _ in 0..drops {
            lr *= self.lr_decay_factor as f64;
        }
        lr as f32
    }
}

/// One SGD step: `g' = g + wd*w`, `v = momentum*v + g'`, `w = w - lr*v`.
///
/// `grads[i]` belongs to `params[i]`; `None` means no gradient this step.
/// Frozen parameters are skipped. All gradients are checked for finiteness
/// before any parameter is touched.
pub fn sgd_step(
    params: &mut [&mut Parameter],
    grads: &[Option<&[f32]>],
    cfg: &OptimizerConfig,
    lr: f32,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "sgd_step: {} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        let Some(g) = g else { continue };
        if g.len() != p.value.len() {
            return Err(Error::Dimension(format!(
                "gradient for {} has {} values, parameter has shape {:?}",
                p.name,
                g.len(),
                p.value.shape()
            )));
        }
        if !p.frozen {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient {} at index {i} of parameter {}",
                    g[i], p.name
                )));
            }
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        if p.frozen {
            continue;
        }
        let wd = if p.is_bias && !cfg.decay_bias {
            0.0
        } else {
            cfg.weight_decay
        };
        let Parameter {
            value,
            momentum_buffer,
            ..
        } = &mut **p;
        for ((w, v), &gv) in value
            .data_mut()
            .iter_mut()
            .zip(momentum_buffer.data_mut())
            .zip(g.iter())
        {
            let gd = gv + wd * *w;
            *v = cfg.momentum * *v + gd;
            *w -= lr * *v;
        }
    }
    Ok(())
}
