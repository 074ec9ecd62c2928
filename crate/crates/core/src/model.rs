//! Conditional convolutional classifier.
//!
//! `conv → BN → ReLU` blocks followed by global average pooling and a linear
//! classifier. Every conv weight and the classifier weight is a
//! [`NoisyWeight`]; every block carries one [`DualBatchNorm`] per slimming
//! factor. Slimmed sub-networks read the leading filters/channels of the
//! shared full-width weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::attacks::AttackTarget;
use crate::autodiff::optim::{ParamRole, Parameter};
use crate::autodiff::{conv_out_extent, BatchStats, NormStats, Tape, Var};
use crate::conditioning::{select_bn, BnBranch, ConditionState, DualBatchNorm, NoisyWeight};
use crate::error::{config_err, dim_err};
use crate::rng::{self, Stream};
use crate::{Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub convs: Vec<ConvSpec>,
}

impl ArchConfig {
    /// Four 3×3 conv blocks (16, 32, 64, 128 filters; strides 1, 1, 2, 2), about
    /// 97K weights for a single-channel input.
    pub fn desk_cnn(in_channels: usize, height: usize, width: usize, n_classes: usize) -> Self {
        let conv = |out_channels, stride| ConvSpec { out_channels, kernel: 3, stride, padding: 1 };
        Self { in_channels, height, width, n_classes, convs: vec![conv(16, 1), conv(32, 1), conv(64, 2), conv(128, 2)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() {
            return Err(config_err!("architecture needs at least one conv layer"));
        }
        if self.in_channels == 0 || self.n_classes < 2 {
            return Err(config_err!("need ≥1 input channel and ≥2 classes"));
        }
        let (mut h, mut w) = (self.height, self.width);
        for (i, c) in self.convs.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(config_err!("conv {} has a zero extent", i));
            }
            h = conv_out_extent(h, c.kernel, c.stride, c.padding).ok_or_else(|| config_err!("conv {} collapses the input", i))?;
            w = conv_out_extent(w, c.kernel, c.stride, c.padding).ok_or_else(|| config_err!("conv {} collapses the input", i))?;
        }
        Ok(())
    }
}

/// Number of channels a slimmed layer keeps: `ceil(factor·channels)`, at least one.
pub fn slim_width(factor: f64, channels: usize) -> usize {
    let w = num_traits::Float::ceil(factor * channels as f64) as usize;
    w.clamp(1, channels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub weight: NoisyWeight<T>,
    /// One dual batch-norm per slimming factor, same order as `Network::slim_factors`.
    pub norms: Vec<DualBatchNorm<T>>,
}

/// Normalization source for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics (training); running averages are not touched here.
    Batch,
    /// Running statistics (evaluation).
    Running,
}

/// Everything that selects one concrete computation graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub condition: ConditionState,
    pub norm: NormMode,
    /// Index into `Network::slim_factors`.
    pub width: usize,
}

impl Path {
    pub fn train(lambda: bool, width: usize) -> Self {
        Self { condition: ConditionState::Train { lambda }, norm: NormMode::Batch, width }
    }

    pub fn infer(lambda_n: f64, lambda_th: f64, width: usize) -> Self {
        Self { condition: ConditionState::Infer { lambda_n, lambda_th }, norm: NormMode::Running, width }
    }

    pub fn branch(&self) -> BnBranch {
        select_bn(&self.condition)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: ArchConfig,
    pub convs: Vec<ConvLayer<T>>,
    pub fc: NoisyWeight<T>,
    pub fc_bias: Parameter<T>,
    /// Descending, first entry 1.0.
    pub slim_factors: Vec<f64>,
}

/// Tape leaves for one layer's parameters.
#[derive(Debug, Clone, Copy)]
struct LayerLeaves {
    theta: Var,
    alpha: Var,
    gamma: Var,
    beta: Var,
}

/// Parameter leaves bound for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    path: Path,
    convs: Vec<LayerLeaves>,
    fc_theta: Var,
    fc_alpha: Var,
    fc_bias: Var,
}

/// Output of [`Network::forward`].
#[derive(Debug)]
pub struct Forward<T> {
    pub logits: Var,
    /// Per-conv batch statistics when run in [`NormMode::Batch`].
    pub stats: Vec<BatchStats<T>>,
}

impl<T: Real> Network<T> {
    /// Kaiming-normal (fan-in) weights, unit/zero batch-norm affine, alpha at its initial value.
    pub fn new(arch: ArchConfig, slim_factors: &[f64], seed: u64) -> Result<Self> {
        arch.validate()?;
        let factors = normalize_factors(slim_factors)?;
        let mut init = Stream::new(seed, rng::PARAM_INIT);
        let mut convs = Vec::with_capacity(arch.convs.len());
        let mut c_in = arch.in_channels;
        for (i, spec) in arch.convs.iter().enumerate() {
            let shape = [spec.out_channels, c_in, spec.kernel, spec.kernel];
            let fan_in = c_in * spec.kernel * spec.kernel;
            let theta = kaiming(&mut init, &shape, fan_in)?;
            let weight = NoisyWeight::new(theta, ParamRole::ConvWeight, Stream::new(seed, rng::train_noise(i)));
            let norms = factors.iter().map(|&f| DualBatchNorm::new(slim_width(f, spec.out_channels))).collect();
            convs.push(ConvLayer { spec: *spec, in_channels: c_in, weight, norms });
            c_in = spec.out_channels;
        }
        let fc_theta = kaiming(&mut init, &[arch.n_classes, c_in], c_in)?;
        let fc = NoisyWeight::new(fc_theta, ParamRole::FcWeight, Stream::new(seed, rng::train_noise(arch.convs.len())));
        let fc_bias = Parameter::new(Tensor::zeros(&[arch.n_classes]), ParamRole::FcBias);
        Ok(Self { arch, convs, fc, fc_bias, slim_factors: factors })
    }

    /// Weight tensors that carry noise and can be masked: every conv, then the classifier.
    pub fn noisy_weights(&self) -> Vec<&NoisyWeight<T>> {
        self.convs.iter().map(|c| &c.weight).chain(core::iter::once(&self.fc)).collect()
    }

    pub fn noisy_weights_mut(&mut self) -> Vec<&mut NoisyWeight<T>> {
        self.convs.iter_mut().map(|c| &mut c.weight).chain(core::iter::once(&mut self.fc)).collect()
    }

    /// All trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = Vec::new();
        for layer in &mut self.convs {
            out.push(&mut layer.weight.theta);
            out.push(&mut layer.weight.alpha);
            for dual in &mut layer.norms {
                out.push(&mut dual.clean.gamma);
                out.push(&mut dual.clean.beta);
                out.push(&mut dual.adversarial.gamma);
                out.push(&mut dual.adversarial.beta);
            }
        }
        out.push(&mut self.fc.theta);
        out.push(&mut self.fc.alpha);
        out.push(&mut self.fc_bias);
        out
    }

    /// Number of weights in conv and classifier tensors plus the classifier bias.
    pub fn weight_count(&self) -> usize {
        self.noisy_weights().iter().map(|w| w.theta.len()).sum::<usize>() + self.fc_bias.len()
    }

    /// Samples fresh training noise for every noisy weight.
    pub fn resample_noise(&mut self, masks: Option<&[Vec<bool>]>) -> Result<()> {
        for (i, w) in self.noisy_weights_mut().into_iter().enumerate() {
            w.resample(masks.map(|m| m[i].as_slice()))?;
        }
        Ok(())
    }

    /// Copy whose cached noise is drawn from the evaluation streams of `seed`.
    pub fn with_eval_noise(&self, seed: u64, masks: Option<&[Vec<bool>]>) -> Result<Self> {
        let mut net = self.clone();
        for (i, w) in net.noisy_weights_mut().into_iter().enumerate() {
            let saved = w.stream().clone();
            w.set_stream(Stream::new(seed, rng::eval_noise(i)));
            w.resample(masks.map(|m| m[i].as_slice()))?;
            w.set_stream(saved);
        }
        Ok(net)
    }

    /// `(out, in)` channel counts of every conv at slim index `width`.
    pub fn widths(&self, width: usize) -> Result<Vec<(usize, usize)>> {
        let factor = *self.slim_factors.get(width).ok_or_else(|| dim_err!("slim index {} out of range", width))?;
        let mut out = Vec::with_capacity(self.convs.len());
        let mut c_in = self.arch.in_channels;
        for layer in &self.convs {
            let c_out = slim_width(factor, layer.spec.out_channels);
            out.push((c_out, c_in));
            c_in = c_out;
        }
        Ok(out)
    }

    /// Creates tape leaves for the parameters used by `path`.
    pub fn bind(&self, tape: &mut Tape<T>, path: Path, requires_grad: bool) -> Result<Bound> {
        if path.width >= self.slim_factors.len() {
            return Err(dim_err!("slim index {} out of range", path.width));
        }
        let branch = path.branch();
        let mut convs = Vec::with_capacity(self.convs.len());
        for layer in &self.convs {
            let bn = layer.norms[path.width].branch(branch);
            convs.push(LayerLeaves {
                theta: tape.leaf(layer.weight.theta.value.clone(), requires_grad),
                alpha: tape.leaf(layer.weight.alpha.value.clone(), requires_grad),
                gamma: tape.leaf(bn.gamma.value.clone(), requires_grad),
                beta: tape.leaf(bn.beta.value.clone(), requires_grad),
            });
        }
        Ok(Bound {
            path,
            convs,
            fc_theta: tape.leaf(self.fc.theta.value.clone(), requires_grad),
            fc_alpha: tape.leaf(self.fc.alpha.value.clone(), requires_grad),
            fc_bias: tape.leaf(self.fc_bias.value.clone(), requires_grad),
        })
    }

    fn effective_weight(&self, tape: &mut Tape<T>, w: &NoisyWeight<T>, theta: Var, alpha: Var, cond: &ConditionState) -> Result<Var> {
        let (scale, dscale) = cond.noise_scale(w.alpha())?;
        if matches!(cond, ConditionState::Train { lambda: false }) {
            return Ok(theta);
        }
        let eta = w.eta().ok_or_else(|| crate::Error::State("noise requested before it was sampled".into()))?;
        tape.noisy_weight(theta, alpha, eta, scale, dscale)
    }

    /// Conditional forward pass: per block `conv(x, θ̂) → selected BN → ReLU`.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, bound: &Bound) -> Result<Forward<T>> {
        let path = bound.path;
        let [_, c, h, w] = tape.value(input).dims4()?;
        if c != self.arch.in_channels || h != self.arch.height || w != self.arch.width {
            return Err(dim_err!(
                "input {}x{}x{} does not match network {}x{}x{}",
                c, h, w, self.arch.in_channels, self.arch.height, self.arch.width
            ));
        }
        let widths = self.widths(path.width)?;
        let branch = path.branch();
        let mut x = input;
        let mut stats = Vec::new();
        for ((layer, leaves), &(c_out, c_in)) in self.convs.iter().zip(&bound.convs).zip(&widths) {
            let full = self.effective_weight(tape, &layer.weight, leaves.theta, leaves.alpha, &path.condition)?;
            let wv = tape.slice_leading(full, c_out, c_in)?;
            let y = tape.conv2d(x, wv, layer.spec.stride, layer.spec.padding)?;
            let bn = layer.norms[path.width].branch(branch);
            let norm = match path.norm {
                NormMode::Batch => NormStats::Batch,
                NormMode::Running => NormStats::Running { mean: &bn.running_mean, var: &bn.running_var },
            };
            let (y, s) = tape.batch_norm(y, leaves.gamma, leaves.beta, norm)?;
            stats.extend(s);
            x = tape.relu(y)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let last = widths.last().map_or(self.arch.in_channels, |w| w.0);
        let full = self.effective_weight(tape, &self.fc, bound.fc_theta, bound.fc_alpha, &path.condition)?;
        let fcw = tape.slice_leading(full, self.arch.n_classes, last)?;
        let logits = tape.dense(pooled, fcw, Some(bound.fc_bias))?;
        Ok(Forward { logits, stats })
    }

    /// Adds the gradients that reached `bound`'s leaves into the parameters' accumulators.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &crate::autodiff::Gradients<T>) -> Result<()> {
        let branch = bound.path.branch();
        let width = bound.path.width;
        for (layer, leaves) in self.convs.iter_mut().zip(&bound.convs) {
            add_grad(&mut layer.weight.theta, grads.get(leaves.theta))?;
            add_grad(&mut layer.weight.alpha, grads.get(leaves.alpha))?;
            let bn = layer.norms[width].branch_mut(branch);
            add_grad(&mut bn.gamma, grads.get(leaves.gamma))?;
            add_grad(&mut bn.beta, grads.get(leaves.beta))?;
        }
        add_grad(&mut self.fc.theta, grads.get(bound.fc_theta))?;
        add_grad(&mut self.fc.alpha, grads.get(bound.fc_alpha))?;
        add_grad(&mut self.fc_bias, grads.get(bound.fc_bias))?;
        Ok(())
    }

    /// Folds batch statistics from a [`NormMode::Batch`] pass into the running averages of `path`'s BN.
    pub fn update_running_stats(&mut self, path: Path, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.len() != self.convs.len() {
            return Err(dim_err!("{} stat sets for {} layers", stats.len(), self.convs.len()));
        }
        let branch = path.branch();
        for (layer, s) in self.convs.iter_mut().zip(stats) {
            layer.norms[path.width].branch_mut(branch).update_running(s)?;
        }
        Ok(())
    }

    /// Logits without recording gradients.
    pub fn logits(&self, x: &Tensor<T>, path: Path) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, path, false)?;
        let xv = tape.leaf(x.clone(), false);
        let out = self.forward(&mut tape, xv, &bound)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Arg-max class of every sample.
    pub fn predict(&self, x: &Tensor<T>, path: Path) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x, path)?))
    }

    /// View of the network under a fixed path, usable as an attack target.
    pub fn view(&self, path: Path) -> NetworkView<'_, T> {
        NetworkView { net: self, path }
    }
}

fn add_grad<T: Real>(p: &mut Parameter<T>, g: Option<&[T]>) -> Result<()> {
    match g {
        Some(g) => p.accumulate_grad(g),
        None => Ok(()),
    }
}

pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn kaiming<T: Real>(rng: &mut Stream, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
    let std = num_traits::Float::sqrt(2.0 / fan_in as f64);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64(std * rng.standard_normal())).collect())
}

fn normalize_factors(factors: &[f64]) -> Result<Vec<f64>> {
    let mut f: Vec<f64> = if factors.is_empty() { vec![1.0] } else { factors.to_vec() };
    if f.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(config_err!("slim factors must lie in (0, 1], got {:?}", f));
    }
    f.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    f.dedup();
    if f[0] != 1.0 {
        return Err(config_err!("slim factors must contain 1.0"));
    }
    Ok(f)
}

/// A network evaluated along one fixed path; never mutates the network.
#[derive(Debug, Clone, Copy)]
pub struct NetworkView<'a, T> {
    pub net: &'a Network<T>,
    pub path: Path,
}

impl<T: Real> AttackTarget<T> for NetworkView<'_, T> {
    fn loss_and_input_grad(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, self.path, false)?;
        let xv = tape.leaf(x.clone(), true);
        let out = self.net.forward(&mut tape, xv, &bound)?;
        let loss = tape.cross_entropy(out.logits, labels)?;
        let mut grads = tape.backward(loss, T::one())?;
        let g = grads.take(xv).ok_or_else(|| crate::autodiff::missing_grad("attack input"))?;
        Ok((tape.value(loss).data()[0], Tensor::new(x.shape(), g)?))
    }
}
