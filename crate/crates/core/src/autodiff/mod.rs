//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value plus whatever it
//! needs for the backward sweep. Nodes that do not (transitively) depend on a
//! leaf marked `requires_grad` are never visited during backward, which is what
//! lets attacks differentiate with respect to the input alone.

mod kernels;
pub mod optim;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::dim_err;
use crate::tensor::check_finite;
use crate::{Error, Real, Result, Tensor};

pub use kernels::conv_out_extent;
use kernels::ConvGeometry;

/// Batch-norm variance guard.
pub const BN_EPSILON: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel statistics of one train-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    /// Elements reduced per channel (`N·H·W`).
    pub count: usize,
}

/// Source of normalization statistics for [`Tape::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a, T> {
    Batch,
    Running { mean: &'a [T], var: &'a [T] },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, geom: ConvGeometry },
    Dense { input: Var, weight: Var, bias: Option<Var> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu { input: Var },
    GlobalAvgPool { input: Var },
    NoisyWeight { theta: Var, alpha: Var, eta: Vec<T>, dscale: T },
    SliceLeading { input: Var, keep_out: usize, keep_in: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], what: &str) -> Result<Var> {
        value.check_finite(what)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 2-d convolution, NCHW input and `[C_o, C_i, k, k]` weight, no bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let [co, ci, kh, kw] = self.value(weight).dims4()?;
        if ci != c {
            return Err(dim_err!("conv2d: input has {} channels, weight expects {}", c, ci));
        }
        if kh != kw {
            return Err(dim_err!("conv2d: non-square kernel {}x{}", kh, kw));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d: stride must be positive"));
        }
        let (ho, wo) = match (conv_out_extent(h, kh, stride, padding), conv_out_extent(w, kw, stride, padding)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(dim_err!("conv2d: kernel {} does not fit {}x{} with padding {}", kh, h, w, padding)),
        };
        let geom = ConvGeometry {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: co,
            kernel: kh,
            stride,
            padding,
            out_height: ho,
            out_width: wo,
        };
        let out = kernels::conv2d_forward(&geom, self.value(input).data(), self.value(weight).data());
        let value = Tensor::new(&[n, co, ho, wo], out)?;
        self.push(value, Op::Conv2d { input, weight, geom }, &[input, weight], "conv2d")
    }

    /// Fully connected layer: `[N, F] · [O, F]ᵀ + b`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [n, f] = self.value(input).dims2()?;
        let [o, wf] = self.value(weight).dims2()?;
        if f != wf {
            return Err(dim_err!("dense: input has {} features, weight expects {}", f, wf));
        }
        let mut out = vec![T::zero(); n * o];
        T::gemm(
            n,
            f,
            o,
            self.value(input).data(),
            crate::real::row_major(f),
            self.value(weight).data(),
            crate::real::transposed(f),
            T::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            if bv.len() != o {
                return Err(dim_err!("dense: bias has {} entries, expected {}", bv.len(), o));
            }
            for row in out.chunks_mut(o) {
                for (y, &bias) in row.iter_mut().zip(bv) {
                    *y += bias;
                }
            }
        }
        let value = Tensor::new(&[n, o], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(value, Op::Dense { input, weight, bias }, &inputs, "dense")
    }

    /// Per-channel normalization followed by the `gamma`/`beta` affine map.
    ///
    /// With [`NormStats::Batch`] the batch statistics are used and returned so
    /// the caller can fold them into running averages.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        if g.len() != c || b.len() != c {
            return Err(dim_err!("batch_norm: affine params have {}/{} entries, expected {}", g.len(), b.len(), c));
        }
        let plane = h * w;
        let count = n * plane;
        let eps = T::from_f64(BN_EPSILON);
        let xd = x.data();
        let (mean, var) = match stats {
            NormStats::Batch => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv_count = T::one() / T::from_usize(count);
                for ch in 0..c {
                    let mut s = T::zero();
                    for s_idx in 0..n {
                        s += xd[(s_idx * c + ch) * plane..(s_idx * c + ch + 1) * plane].iter().copied().sum::<T>();
                    }
                    let m = s * inv_count;
                    let mut v = T::zero();
                    for s_idx in 0..n {
                        for &val in &xd[(s_idx * c + ch) * plane..(s_idx * c + ch + 1) * plane] {
                            let d = val - m;
                            v += d * d;
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v * inv_count;
                }
                (mean, var)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(dim_err!("batch_norm: running stats have {} entries, expected {}", mean.len(), c));
                }
                (mean.to_vec(), var.to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for s_idx in 0..n {
            for ch in 0..c {
                let base = (s_idx * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        let batch_stats = matches!(stats, NormStats::Batch);
        let op = Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats };
        let var_out = self.push(value, op, &[input, gamma, beta], "batch_norm")?;
        Ok((var_out, batch_stats.then_some(BatchStats { mean, var, count })))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu { input }, &[input], "relu")
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let plane = h * w;
        let scale = T::one() / T::from_usize(plane);
        let out: Vec<T> =
            self.value(input).data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * scale).collect();
        let value = Tensor::new(&[n, c], out)?;
        self.push(value, Op::GlobalAvgPool { input }, &[input], "global_avg_pool")
    }

    /// `theta + scale·eta`, with `eta` a constant and `d scale / d alpha = dscale`.
    ///
    /// A zero `scale` yields `theta` bit-for-bit.
    pub fn noisy_weight(&mut self, theta: Var, alpha: Var, eta: &[T], scale: T, dscale: T) -> Result<Var> {
        let th = self.value(theta);
        if eta.len() != th.len() {
            return Err(dim_err!("noisy_weight: noise has {} entries, weight {}", eta.len(), th.len()));
        }
        if self.value(alpha).len() != 1 {
            return Err(dim_err!("noisy_weight: alpha must be a scalar"));
        }
        let value = if scale == T::zero() {
            th.clone()
        } else {
            let data = th.data().iter().zip(eta).map(|(&t, &e)| t + scale * e).collect();
            Tensor::new(th.shape(), data)?
        };
        let op = Op::NoisyWeight { theta, alpha, eta: eta.to_vec(), dscale };
        self.push(value, op, &[theta, alpha], "noisy_weight")
    }

    /// Leading `keep_out` rows and `keep_in` columns of a `[O, I, ...]` tensor.
    pub fn slice_leading(&mut self, input: Var, keep_out: usize, keep_in: usize) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape();
        if shape.len() < 2 {
            return Err(dim_err!("slice_leading: need at least 2 dims, got {:?}", shape));
        }
        let (o, i) = (shape[0], shape[1]);
        if keep_out == 0 || keep_in == 0 || keep_out > o || keep_in > i {
            return Err(dim_err!("slice_leading: cannot keep {}x{} of {}x{}", keep_out, keep_in, o, i));
        }
        if keep_out == o && keep_in == i {
            return Ok(input);
        }
        let rest: usize = shape[2..].iter().product();
        let mut out = Vec::with_capacity(keep_out * keep_in * rest);
        for r in 0..keep_out {
            let row = &x.data()[r * i * rest..];
            out.extend_from_slice(&row[..keep_in * rest]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[0] = keep_out;
        new_shape[1] = keep_in;
        let value = Tensor::new(&new_shape, out)?;
        self.push(value, Op::SliceLeading { input, keep_out, keep_in }, &[input], "slice")
    }

    /// Mean softmax cross-entropy over the batch; returns a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(dim_err!("cross_entropy: {} targets for batch of {}", targets.len(), n));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(dim_err!("cross_entropy: label {} outside [0, {})", bad, k));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (row, (p_row, &t)) in z.chunks(k).zip(probs.chunks_mut(k).zip(targets)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (p, &v) in p_row.iter_mut().zip(row) {
                *p = (v - max).exp();
                sum += *p;
            }
            for p in p_row.iter_mut() {
                *p /= sum;
            }
            total += max + sum.ln() - row[t];
        }
        let loss = total / T::from_usize(n);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, &[logits], "cross_entropy")
    }

    /// Back-propagates `seed · d(output)/d(·)` to every node that requires it.
    pub fn backward(&self, output: Var, seed: T) -> Result<Gradients<T>> {
        self.backward_with(output, vec![seed; self.nodes[output.0].value.len()])
    }

    /// Vector-Jacobian product: back-propagates an explicit output cotangent.
    pub fn backward_with(&self, output: Var, cotangent: Vec<T>) -> Result<Gradients<T>> {
        if cotangent.len() != self.nodes[output.0].value.len() {
            return Err(dim_err!("backward: cotangent has {} entries, output {}", cotangent.len(), self.value(output).len()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(cotangent);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            check_finite(&g, "backward")?;
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, geom } => {
                let mut gi = self.wants(*input).then(|| vec![T::zero(); self.value(*input).len()]);
                let mut gw = self.wants(*weight).then(|| vec![T::zero(); self.value(*weight).len()]);
                kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                );
                if let Some(gi) = gi {
                    accumulate(grads, *input, gi);
                }
                if let Some(gw) = gw {
                    accumulate(grads, *weight, gw);
                }
            }
            Op::Dense { input, weight, bias } => {
                let [n, f] = self.value(*input).dims2()?;
                let o = self.value(*weight).shape()[0];
                if self.wants(*input) {
                    let mut gi = vec![T::zero(); n * f];
                    let w = self.value(*weight).data();
                    T::gemm(n, o, f, g, crate::real::row_major(o), w, crate::real::row_major(f), T::zero(), &mut gi);
                    accumulate(grads, *input, gi);
                }
                if self.wants(*weight) {
                    let mut gw = vec![T::zero(); o * f];
                    let x = self.value(*input).data();
                    T::gemm(o, n, f, g, crate::real::transposed(o), x, crate::real::row_major(f), T::zero(), &mut gw);
                    accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    let mut gb = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, b, gb);
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                let [n, c, h, w] = self.value(*input).dims4()?;
                let plane = h * w;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for i in base..base + plane {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if self.wants(*input) {
                    let mut gi = vec![T::zero(); g.len()];
                    let count = T::from_usize(n * plane);
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * plane;
                            let k = gam[ch] * inv_std[ch];
                            if *batch_stats {
                                let mg = sum_g[ch] / count;
                                let mgx = sum_gx[ch] / count;
                                for i in base..base + plane {
                                    gi[i] = k * (g[i] - mg - xhat[i] * mgx);
                                }
                            } else {
                                for i in base..base + plane {
                                    gi[i] = k * g[i];
                                }
                            }
                        }
                    }
                    accumulate(grads, *input, gi);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, sum_gx);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, sum_g);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let gi = x.iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                accumulate(grads, *input, gi);
            }
            Op::GlobalAvgPool { input } => {
                let [_, _, h, w] = self.value(*input).dims4()?;
                let plane = h * w;
                let scale = T::one() / T::from_usize(plane);
                let mut gi = Vec::with_capacity(g.len() * plane);
                for &gv in g {
                    gi.extend(core::iter::repeat(gv * scale).take(plane));
                }
                accumulate(grads, *input, gi);
            }
            Op::NoisyWeight { theta, alpha, eta, dscale } => {
                if self.wants(*alpha) {
                    let s: T = g.iter().zip(eta).map(|(&a, &b)| a * b).sum();
                    accumulate(grads, *alpha, vec![*dscale * s]);
                }
                if self.wants(*theta) {
                    accumulate(grads, *theta, g.to_vec());
                }
            }
            Op::SliceLeading { input, keep_out, keep_in } => {
                let shape = self.value(*input).shape();
                let i = shape[1];
                let rest: usize = shape[2..].iter().product();
                let mut gi = vec![T::zero(); self.value(*input).len()];
                for r in 0..*keep_out {
                    let src = &g[r * keep_in * rest..(r + 1) * keep_in * rest];
                    gi[r * i * rest..r * i * rest + keep_in * rest].copy_from_slice(src);
                }
                accumulate(grads, *input, gi);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = self.value(*logits).shape()[1];
                let n = targets.len();
                let scale = g[0] / T::from_usize(n);
                let mut gi = probs.clone();
                for (row, &t) in gi.chunks_mut(k).zip(targets) {
                    row[t] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(grads, *logits, gi);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], var: Var, g: Vec<T>) {
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Error for a gradient that was expected but never produced.
pub(crate) fn missing_grad(what: &str) -> Error {
    Error::State(alloc::format!("no gradient reached {what}"))
}
