//! L∞ adversarial examples: FGSM and k-step PGD with projection onto the
//! ε-ball around the clean input, intersected with the valid pixel range.

use alloc::vec::Vec;

use crate::error::config_err;
use crate::rng::Stream;
use crate::tensor::check_finite;
use crate::{Error, Real, Result, Tensor};

/// Something whose loss can be differentiated with respect to its input.
pub trait AttackTarget<T> {
    /// Mean cross-entropy on `(x, labels)` and its gradient with respect to `x`.
    fn loss_and_input_grad(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub clip_min: f64,
    pub clip_max: f64,
}

impl AttackConfig {
    /// PGD-7, ε = 8/255, step 2/255, random start (training setting).
    pub fn pgd7() -> Self {
        Self { epsilon: 8.0 / 255.0, steps: 7, step_size: 2.0 / 255.0, random_start: true, clip_min: 0.0, clip_max: 1.0 }
    }

    /// PGD-20 evaluation attack, deterministic start.
    pub fn pgd20() -> Self {
        Self { steps: 20, random_start: false, ..Self::pgd7() }
    }

    /// FGSM with ε = 8/255.
    pub fn fgsm() -> Self {
        Self { steps: 1, step_size: 8.0 / 255.0, random_start: false, ..Self::pgd7() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(config_err!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(config_err!("step size must be positive, got {}", self.step_size));
        }
        if self.clip_min.is_nan() || self.clip_max.is_nan() || self.clip_min >= self.clip_max {
            return Err(config_err!("clip range [{}, {}] is empty", self.clip_min, self.clip_max));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::pgd7()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

/// A named attack: kind plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attack {
    pub kind: AttackKind,
    pub config: AttackConfig,
}

impl Attack {
    pub fn run<T: Real>(
        &self,
        target: &impl AttackTarget<T>,
        x: &Tensor<T>,
        labels: &[usize],
        rng: Option<&mut Stream>,
    ) -> Result<Tensor<T>> {
        match self.kind {
            AttackKind::Fgsm => fgsm(target, x, labels, &self.config),
            AttackKind::Pgd => pgd_attack(target, x, labels, &self.config, rng),
        }
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Per-element `[lo, hi]` bounds of the ε-ball intersected with the clip range.
///
/// Bounds are nudged inward so the realized distance never exceeds ε after rounding.
fn ball<T: Real>(x: &[T], cfg: &AttackConfig) -> Vec<(T, T)> {
    let eps = T::from_f64(cfg.epsilon);
    let eps64 = cfg.epsilon;
    let (cmin, cmax) = (T::from_f64(cfg.clip_min), T::from_f64(cfg.clip_max));
    x.iter()
        .map(|&v| {
            let mut hi = v + eps;
            while hi.as_f64() - v.as_f64() > eps64 {
                hi = hi.next_down();
            }
            let mut lo = v - eps;
            while v.as_f64() - lo.as_f64() > eps64 {
                lo = -((-lo).next_down());
            }
            (lo.max(cmin), hi.min(cmax))
        })
        .collect()
}

fn check_input<T: Real>(x: &Tensor<T>, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    x.check_finite("attack input")?;
    let (lo, hi) = (cfg.clip_min, cfg.clip_max);
    if x.data().iter().any(|v| v.as_f64() < lo || v.as_f64() > hi) {
        return Err(Error::Range(alloc::format!("attack input outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn signed_step<T: Real>(
    target: &impl AttackTarget<T>,
    current: &Tensor<T>,
    labels: &[usize],
    step: T,
    bounds: &[(T, T)],
) -> Result<Tensor<T>> {
    let (_, grad) = target.loss_and_input_grad(current, labels)?;
    check_finite(grad.data(), "attack gradient")?;
    let data = current
        .data()
        .iter()
        .zip(grad.data())
        .zip(bounds)
        .map(|((&v, &g), &(lo, hi))| (v + step * sign(g)).max(lo).min(hi))
        .collect();
    Tensor::new(current.shape(), data)
}

/// Single signed-gradient step of size ε.
pub fn fgsm<T: Real>(target: &impl AttackTarget<T>, x: &Tensor<T>, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor<T>> {
    check_input(x, cfg)?;
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let bounds = ball(x.data(), cfg);
    signed_step(target, x, labels, T::from_f64(cfg.epsilon), &bounds)
}

/// `k` iterations of `x̂ ← Proj(x̂ + σ·sign(∇ₓL))`, optionally from a uniform random start.
pub fn pgd_attack<T: Real>(
    target: &impl AttackTarget<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: Option<&mut Stream>,
) -> Result<Tensor<T>> {
    check_input(x, cfg)?;
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let bounds = ball(x.data(), cfg);
    let mut adv = if cfg.random_start {
        let rng = rng.ok_or_else(|| Error::State("random start requested without a random stream".into()))?;
        let data = x
            .data()
            .iter()
            .zip(&bounds)
            .map(|(&v, &(lo, hi))| (v + T::from_f64(rng.uniform(-cfg.epsilon, cfg.epsilon))).max(lo).min(hi))
            .collect();
        Tensor::new(x.shape(), data)?
    } else {
        x.clone()
    };
    let step = T::from_f64(cfg.step_size);
    for _ in 0..cfg.steps {
        adv = signed_step(target, &adv, labels, step, &bounds)?;
    }
    Ok(adv)
}
