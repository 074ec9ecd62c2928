//! Closed-form delay, parameter and operation counts for plain, noise-conditioned
//! and FiLM-conditioned convolution layers on a sequential read-then-multiply
//! accelerator.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::config_err;
use crate::Result;

/// Accelerator parameters. Times are in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwParams {
    /// Memory IO bandwidth in bits per read cycle.
    pub b_io: u64,
    /// Bits per stored weight.
    pub b_w: u64,
    pub n_bank: u64,
    pub n_mult: u64,
    pub tau_read: f64,
    pub tau_mult: f64,
}

impl Default for HwParams {
    fn default() -> Self {
        Self { b_io: 64, b_w: 8, n_bank: 8, n_mult: 1024, tau_read: 9.0, tau_mult: 4.0 }
    }
}

impl HwParams {
    pub fn validate(&self) -> Result<()> {
        if self.b_io == 0 || self.b_w == 0 || self.n_bank == 0 || self.n_mult == 0 {
            return Err(config_err!("hardware counts must be positive: {:?}", self));
        }
        if !(self.tau_read > 0.0 && self.tau_read.is_finite() && self.tau_mult > 0.0 && self.tau_mult.is_finite()) {
            return Err(config_err!("hardware times must be positive: {:?}", self));
        }
        Ok(())
    }

    /// `ceil(words / ((B_IO / B_W) · N_bank))`, evaluated as `ceil(words·B_W / (B_IO·N_bank))`.
    pub fn read_cycles(&self, words: u64) -> u64 {
        ceil_div(words as u128 * self.b_w as u128, self.b_io as u128 * self.n_bank as u128) as u64
    }

    /// `ceil(ops / N_mult)`.
    pub fn mult_cycles(&self, ops: u64) -> u64 {
        ceil_div(ops as u128, self.n_mult as u128) as u64
    }
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Fc,
}

/// One weight layer. Fully connected layers use `k = h_out = w_out = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub k: u64,
    pub c_in: u64,
    pub c_out: u64,
    pub h_out: u64,
    pub w_out: u64,
    /// True for convs that carry a conditioning module (noise scale or FiLM).
    pub conditioned: bool,
    /// True for residual projection convs, which sit beside the main chain.
    pub shortcut: bool,
}

impl LayerSpec {
    pub fn conv(k: u64, c_in: u64, c_out: u64, h_out: u64, w_out: u64) -> Self {
        Self { kind: LayerKind::Conv, k, c_in, c_out, h_out, w_out, conditioned: true, shortcut: false }
    }

    pub fn shortcut(c_in: u64, c_out: u64, h_out: u64, w_out: u64) -> Self {
        Self { conditioned: false, shortcut: true, ..Self::conv(1, c_in, c_out, h_out, w_out) }
    }

    pub fn fc(c_in: u64, c_out: u64) -> Self {
        Self { kind: LayerKind::Fc, k: 1, c_in, c_out, h_out: 1, w_out: 1, conditioned: false, shortcut: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.c_in == 0 || self.c_out == 0 || self.h_out == 0 || self.w_out == 0 {
            return Err(config_err!("layer dimensions must be positive: {:?}", self));
        }
        if self.kind == LayerKind::Fc && (self.k != 1 || self.h_out != 1 || self.w_out != 1) {
            return Err(config_err!("fully connected layer must have k = H_o = W_o = 1: {:?}", self));
        }
        Ok(())
    }

    /// `k²·C_i·C_o`.
    pub fn weights(&self) -> u64 {
        self.k * self.k * self.c_in * self.c_out
    }

    /// Multiply-accumulates for one input sample.
    pub fn macs(&self) -> u64 {
        self.weights() * self.h_out * self.w_out
    }

    /// FiLM parameters attached to this layer: `2·C_o + 4·C_o²`.
    pub fn film_overhead(&self) -> u64 {
        2 * self.c_out + 4 * self.c_out * self.c_out
    }
}

fn check(l: &LayerSpec, hw: &HwParams) -> Result<()> {
    l.validate()?;
    hw.validate()
}

/// Delay of a plain layer: weight reads followed by `H_o·W_o` multiply rounds.
pub fn conv_delay(l: &LayerSpec, hw: &HwParams) -> Result<f64> {
    check(l, hw)?;
    let read = hw.read_cycles(l.weights());
    let mult = hw.mult_cycles(l.weights()) * l.h_out * l.w_out;
    Ok(read as f64 * hw.tau_read + mult as f64 * hw.tau_mult)
}

/// Delay with one extra multiply round for the noise addition on the weights.
pub fn float_conv_delay(l: &LayerSpec, hw: &HwParams) -> Result<f64> {
    check(l, hw)?;
    let read = hw.read_cycles(l.weights());
    let mult = hw.mult_cycles(l.weights()) * (1 + l.h_out * l.w_out);
    Ok(read as f64 * hw.tau_read + mult as f64 * hw.tau_mult)
}

/// Delay with FiLM weights read alongside the kernel and one FiLM multiply round.
pub fn oat_conv_delay(l: &LayerSpec, hw: &HwParams) -> Result<f64> {
    check(l, hw)?;
    let film = l.film_overhead();
    let read = hw.read_cycles(l.weights() + film);
    let mult = hw.mult_cycles(l.weights()) * l.h_out * l.w_out + hw.mult_cycles(film);
    Ok(read as f64 * hw.tau_read + mult as f64 * hw.tau_mult)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Float,
    Oat,
}

/// Network-level totals. `flops` counts one operation per multiply-accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostSummary {
    pub params: u64,
    pub flops: u64,
    pub noise_add_ops: u64,
}

impl CostSummary {
    /// Noise additions as a fraction of `flops`.
    pub fn noise_overhead(&self) -> f64 {
        self.noise_add_ops as f64 / self.flops as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    /// `(channels, height, width)` of the input image.
    pub input: (u64, u64, u64),
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Main-chain layers must chain channel counts; a shortcut must project from the
    /// block input to the preceding main layer's output width.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(config_err!("architecture {} has no layers", self.name));
        }
        let mut c = self.input.0;
        let mut block_in = c;
        let mut main = 0;
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.shortcut {
                if l.c_out != c || l.c_in != block_in {
                    return Err(config_err!("shortcut {} of {} maps {}→{}, expected {}→{}", i, self.name, l.c_in, l.c_out, block_in, c));
                }
                continue;
            }
            if l.c_in != c {
                return Err(config_err!("layer {} of {} expects {} channels, receives {}", i, self.name, l.c_in, c));
            }
            // two-conv residual blocks follow the stem
            if l.kind == LayerKind::Conv && main % 2 == 1 {
                block_in = c;
            }
            c = l.c_out;
            main += 1;
        }
        Ok(())
    }

    /// CIFAR ResNet34: 3×3 stem, basic blocks `[3, 4, 6, 3]`, 1×1 projection shortcuts.
    pub fn resnet34(classes: u64) -> Self {
        residual("resnet34", 32, 64, &[(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)], classes)
    }

    /// Wide ResNet 16-8 on 32×32 inputs.
    pub fn wrn16_8(classes: u64) -> Self {
        wide("wrn16_8", 16, 8, 32, classes)
    }

    /// Wide ResNet 40-2 on 96×96 inputs.
    pub fn wrn40_2(classes: u64) -> Self {
        wide("wrn40_2", 40, 2, 96, classes)
    }

    pub fn preset(name: &str, classes: u64) -> Option<Self> {
        match name {
            "resnet34" => Some(Self::resnet34(classes)),
            "wrn16_8" => Some(Self::wrn16_8(classes)),
            "wrn40_2" => Some(Self::wrn40_2(classes)),
            _ => None,
        }
    }
}

fn wide(name: &str, depth: u64, k: u64, size: u64, classes: u64) -> ArchSpec {
    let n = (depth - 4) / 6;
    let stages = [(16 * k, n, 1), (32 * k, n, 2), (64 * k, n, 2)];
    residual(name, size, 16, &stages, classes)
}

/// 3×3 stem then stages of `(width, blocks, first stride)` two-conv blocks, then the classifier.
fn residual(name: &str, size: u64, stem: u64, stages: &[(u64, u64, u64)], classes: u64) -> ArchSpec {
    let mut layers = Vec::new();
    let mut hw = size;
    layers.push(LayerSpec::conv(3, 3, stem, hw, hw));
    let mut c = stem;
    for &(width, blocks, stride) in stages {
        for b in 0..blocks {
            let s = if b == 0 { stride } else { 1 };
            hw = hw.div_ceil(s);
            layers.push(LayerSpec::conv(3, c, width, hw, hw));
            layers.push(LayerSpec::conv(3, width, width, hw, hw));
            if s != 1 || c != width {
                layers.push(LayerSpec::shortcut(c, width, hw, hw));
            }
            c = width;
        }
    }
    layers.push(LayerSpec::fc(c, classes));
    ArchSpec { name: name.into(), input: (3, size, size), layers }
}

/// Parameters (weights plus classifier bias), MAC count and noise additions.
///
/// The FiLM variant adds `2·C_o + 4·C_o²` parameters and operations per
/// conditioned conv and performs no noise additions.
pub fn count_params_flops(arch: &ArchSpec, variant: Variant) -> Result<CostSummary> {
    arch.validate()?;
    let mut s = CostSummary::default();
    for l in &arch.layers {
        s.params += l.weights();
        s.flops += l.macs();
        if l.kind == LayerKind::Fc {
            s.params += l.c_out;
        }
        match variant {
            Variant::Float => s.noise_add_ops += l.weights(),
            Variant::Oat if l.conditioned && l.kind == LayerKind::Conv => {
                s.params += l.film_overhead();
                s.flops += l.film_overhead();
            }
            Variant::Oat => {}
        }
    }
    Ok(s)
}

/// Per-layer delays in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCost {
    pub index: usize,
    pub layer: LayerSpec,
    pub conv_ns: f64,
    pub float_ns: f64,
    pub oat_ns: f64,
}

impl LayerCost {
    pub fn oat_over_float(&self) -> f64 {
        self.oat_ns / self.float_ns
    }
}

/// Delays of every conv layer of `arch`.
pub fn layer_costs(arch: &ArchSpec, hw: &HwParams) -> Result<Vec<LayerCost>> {
    arch.validate()?;
    arch.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind == LayerKind::Conv)
        .map(|(index, l)| {
            Ok(LayerCost {
                index,
                layer: *l,
                conv_ns: conv_delay(l, hw)?,
                float_ns: float_conv_delay(l, hw)?,
                oat_ns: oat_conv_delay(l, hw)?,
            })
        })
        .collect()
}

/// Largest FiLM/noise delay ratio over the conditioned convs.
pub fn max_oat_float_ratio(arch: &ArchSpec, hw: &HwParams) -> Result<f64> {
    Ok(layer_costs(arch, hw)?
        .iter()
        .filter(|c| c.layer.conditioned)
        .map(LayerCost::oat_over_float)
        .fold(0.0, f64::max))
}
