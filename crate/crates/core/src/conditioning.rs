//! Noisy weight transformation, dual batch-norm routing and post-training
//! noise rescaling.
//!
//! During training a binary `lambda` selects either the plain weights with the
//! clean batch-norm (`lambda = 0`) or `theta + alpha·eta` with the adversarial
//! batch-norm (`lambda = 1`). After training, a continuous `lambda_n ∈ [0, 1]`
//! rescales `alpha` and a threshold `lambda_th` picks the batch-norm.
//!
//! With `lambda_th = 0.5` the rescaled `alpha` drops from `alpha` to almost
//! zero just above `lambda_n = 0.5`, exactly where the adversarial batch-norm
//! takes over. That discontinuity is intentional and kept as is.

use alloc::vec::Vec;

use crate::autodiff::optim::{ParamRole, Parameter};
use crate::autodiff::BatchStats;
use crate::error::config_err;
use crate::rng::Stream;
use crate::tensor::mean_std;
use crate::{Error, Real, Result, Tensor};

/// Initial value of every layer's noise scale.
pub const ALPHA_INIT: f64 = 0.25;
/// Running-statistics momentum of batch-norm layers.
pub const BN_MOMENTUM: f64 = 0.1;

/// A weight tensor `theta` with its learnable noise scale `alpha` and cached noise `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyWeight<T> {
    pub theta: Parameter<T>,
    /// Scalar parameter; unconstrained in sign.
    pub alpha: Parameter<T>,
    eta: Option<Vec<T>>,
    rng: Stream,
}

impl<T: Real> NoisyWeight<T> {
    pub fn new(theta: Tensor<T>, role: ParamRole, rng: Stream) -> Self {
        Self {
            theta: Parameter::new(theta, role),
            alpha: Parameter::new(Tensor::scalar(T::from_f64(ALPHA_INIT)), ParamRole::AlphaScale),
            eta: None,
            rng,
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha.value.data()[0]
    }

    pub fn set_alpha(&mut self, value: T) {
        self.alpha.value.data_mut()[0] = value;
    }

    /// Most recently sampled noise, if any.
    pub fn eta(&self) -> Option<&[T]> {
        self.eta.as_deref()
    }

    pub fn set_eta(&mut self, eta: Vec<T>) -> Result<()> {
        if eta.len() != self.theta.len() {
            return Err(Error::Dimension(alloc::format!(
                "noise has {} entries, weight {}",
                eta.len(),
                self.theta.len()
            )));
        }
        self.eta = Some(eta);
        Ok(())
    }

    pub fn stream(&self) -> &Stream {
        &self.rng
    }

    pub fn set_stream(&mut self, rng: Stream) {
        self.rng = rng;
    }

    /// Draws fresh `eta ~ N(0, sigma²)` with `sigma` the standard deviation of the
    /// current `theta` entries. Entries where `active` is false get zero noise.
    pub fn resample(&mut self, active: Option<&[bool]>) -> Result<()> {
        let (_, sigma) = mean_std(self.theta.value.data());
        let mut eta = Vec::with_capacity(self.theta.len());
        for i in 0..self.theta.len() {
            let z = self.rng.standard_normal();
            let on = active.map_or(true, |m| m[i]);
            eta.push(if on { T::from_f64(sigma * z) } else { T::zero() });
        }
        self.eta = Some(eta);
        Ok(())
    }

    /// Value-level `theta + lambda·alpha·eta`.
    pub fn transform(&mut self, lambda: bool, fresh_noise: bool) -> Result<Tensor<T>> {
        if !self.alpha().is_finite() {
            return Err(Error::Numeric("alpha".into()));
        }
        if fresh_noise {
            self.resample(None)?;
        }
        let scale = if lambda { self.alpha() } else { T::zero() };
        transform_weights(&self.theta.value, self.eta.as_deref(), scale)
    }
}

/// `theta + scale·eta`; a zero `scale` returns `theta` bit-for-bit.
pub fn transform_weights<T: Real>(theta: &Tensor<T>, eta: Option<&[T]>, scale: T) -> Result<Tensor<T>> {
    let eta = eta.ok_or_else(|| Error::State("noise requested before it was sampled".into()))?;
    if eta.len() != theta.len() {
        return Err(Error::Dimension(alloc::format!("noise has {} entries, weight {}", eta.len(), theta.len())));
    }
    if scale == T::zero() {
        return Ok(theta.clone());
    }
    let data = theta.data().iter().zip(eta).map(|(&t, &e)| t + scale * e).collect();
    Tensor::new(theta.shape(), data)
}

/// Multiplier applied to `alpha` at inference for a given `(lambda_n, lambda_th)`.
///
/// `lambda_th = 0`: `lambda_n`. `lambda_th = 0.5`: `2·lambda_n` up to 0.5, then
/// `2·(lambda_n − 0.5)`.
pub fn rescale_factor(lambda_n: f64, lambda_th: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda_n) {
        return Err(Error::Range(alloc::format!("lambda_n {lambda_n} outside [0, 1]")));
    }
    if lambda_th == 0.0 {
        Ok(lambda_n)
    } else if lambda_th == 0.5 {
        Ok(if lambda_n <= 0.5 { 2.0 * lambda_n } else { 2.0 * (lambda_n - 0.5) })
    } else {
        Err(config_err!("lambda_th must be 0.0 or 0.5, got {}", lambda_th))
    }
}

/// Rescaled noise scale used at inference.
pub fn rescale_alpha<T: Real>(alpha: T, lambda_n: f64, lambda_th: f64) -> Result<T> {
    let factor = rescale_factor(lambda_n, lambda_th)?;
    Ok(T::from_f64(alpha.as_f64() * factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BnBranch {
    Clean,
    Adversarial,
}

/// Conditioning for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionState {
    /// Binary training condition: `false` = clean path, `true` = noisy path.
    Train { lambda: bool },
    /// Continuous inference condition.
    Infer { lambda_n: f64, lambda_th: f64 },
}

impl ConditionState {
    pub fn clean() -> Self {
        Self::Train { lambda: false }
    }

    pub fn adversarial() -> Self {
        Self::Train { lambda: true }
    }

    /// `(scale, d scale / d alpha)` for a layer whose noise scale is `alpha`.
    pub fn noise_scale<T: Real>(&self, alpha: T) -> Result<(T, T)> {
        match *self {
            Self::Train { lambda: false } => Ok((T::zero(), T::zero())),
            Self::Train { lambda: true } => Ok((alpha, T::one())),
            Self::Infer { lambda_n, lambda_th } => {
                let factor = rescale_factor(lambda_n, lambda_th)?;
                Ok((rescale_alpha(alpha, lambda_n, lambda_th)?, T::from_f64(factor)))
            }
        }
    }
}

/// Adversarial batch-norm iff `lambda_n > lambda_th` (strict); training follows `lambda`.
pub fn select_bn(state: &ConditionState) -> BnBranch {
    match *state {
        ConditionState::Train { lambda } => {
            if lambda {
                BnBranch::Adversarial
            } else {
                BnBranch::Clean
            }
        }
        ConditionState::Infer { lambda_n, lambda_th } => {
            if lambda_n > lambda_th {
                BnBranch::Adversarial
            } else {
                BnBranch::Clean
            }
        }
    }
}

/// Affine parameters and running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full(&[channels], T::one()), ParamRole::BnGamma),
            beta: Parameter::new(Tensor::zeros(&[channels]), ParamRole::BnBeta),
            running_mean: alloc::vec![T::zero(); channels],
            running_var: alloc::vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential moving average with momentum [`BN_MOMENTUM`]; the variance
    /// folded in is the unbiased batch estimate.
    pub fn update_running(&mut self, stats: &BatchStats<T>) -> Result<()> {
        if stats.mean.len() != self.channels() {
            return Err(Error::Dimension(alloc::format!(
                "batch stats for {} channels, layer has {}",
                stats.mean.len(),
                self.channels()
            )));
        }
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - m;
        let correction =
            if stats.count > 1 { T::from_usize(stats.count) / T::from_usize(stats.count - 1) } else { T::one() };
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = keep * self.running_var[c] + m * stats.var[c] * correction;
        }
        Ok(())
    }
}

/// Independent clean and adversarial batch-norm layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatchNorm<T> {
    pub clean: BatchNorm<T>,
    pub adversarial: BatchNorm<T>,
}

impl<T: Real> DualBatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self { clean: BatchNorm::new(channels), adversarial: BatchNorm::new(channels) }
    }

    pub fn branch(&self, b: BnBranch) -> &BatchNorm<T> {
        match b {
            BnBranch::Clean => &self.clean,
            BnBranch::Adversarial => &self.adversarial,
        }
    }

    pub fn branch_mut(&mut self, b: BnBranch) -> &mut BatchNorm<T> {
        match b {
            BnBranch::Clean => &mut self.clean,
            BnBranch::Adversarial => &mut self.adversarial,
        }
    }
}
