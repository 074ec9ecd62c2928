//! SGD with momentum and L2 weight decay, plus the cosine learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, dim_err};
use crate::tensor::check_finite;
use crate::{Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    ConvWeight,
    FcWeight,
    FcBias,
    BnGamma,
    BnBeta,
    AlphaScale,
}

/// A trainable tensor with its momentum buffer and gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub momentum: Vec<T>,
    pub grad: Vec<T>,
    pub role: ParamRole,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>, role: ParamRole) -> Self {
        let n = value.len();
        Self { value, momentum: vec![T::zero(); n], grad: vec![T::zero(); n], role }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.grad.len() {
            return Err(dim_err!("gradient has {} entries, parameter {}", g.len(), self.grad.len()));
        }
        for (a, &v) in self.grad.iter_mut().zip(g) {
            *a += v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, momentum: 0.9, weight_decay: 5e-4, total_epochs: 200 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.total_epochs == 0 {
            return Err(config_err!("total_epochs must be positive"));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate for `epoch ∈ [0, total_epochs]`.
pub fn cosine_lr(epoch: usize, cfg: &OptimizerConfig) -> Result<f64> {
    if cfg.total_epochs == 0 || epoch > cfg.total_epochs {
        return Err(config_err!("epoch {} outside [0, {}]", epoch, cfg.total_epochs));
    }
    let phase = core::f64::consts::PI * epoch as f64 / cfg.total_epochs as f64;
    Ok(0.5 * cfg.learning_rate * (1.0 + num_traits::Float::cos(phase)))
}


/// One momentum-SGD update from the accumulated gradient.
///
/// `buf ← momentum·buf + (grad + weight_decay·value)`, `value ← value − lr·buf`.
/// Entries where `mask` is false keep their value; their momentum still tracks
/// the raw gradient so dormant weights can be ranked for regrowth.
pub fn sgd_step<T: Real>(
    param: &mut Parameter<T>,
    cfg: &OptimizerConfig,
    lr: f64,
    mask: Option<&[bool]>,
) -> Result<()> {
    if lr.is_nan() || lr < 0.0 {
        return Err(config_err!("learning rate must be non-negative, got {}", lr));
    }
    if param.momentum.len() != param.value.len() || param.grad.len() != param.value.len() {
        return Err(dim_err!("optimizer buffers do not match parameter shape"));
    }
    if let Some(m) = mask {
        if m.len() != param.value.len() {
            return Err(dim_err!("mask has {} entries, parameter {}", m.len(), param.value.len()));
        }
    }
    check_finite(&param.grad, "gradient")?;
    let mu = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    let lr = T::from_f64(lr);
    let values = param.value.data_mut();
    for i in 0..values.len() {
        let active = mask.map_or(true, |m| m[i]);
        let d = param.grad[i] + wd * values[i];
        param.momentum[i] = mu * param.momentum[i] + d;
        if active {
            values[i] -= lr * param.momentum[i];
        }
    }
    Ok(())
}
