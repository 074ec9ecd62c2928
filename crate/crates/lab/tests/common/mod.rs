#![allow(dead_code)]

use std::path::{Path, PathBuf};

use float_core::model::Network;
use float_lab::checkpoint::{Checkpoint, Value};
use float_lab::config::ExperimentConfig;
use float_lab::dataset::save_dataset;
use float_lab::synth::{make_synthetic, SynthSpec};
use serde_json::{json, Value as Json};

/// Writes a train and a test set that share class textures but not samples.
pub fn write_data(dir: &Path, train_per_class: usize, test_per_class: usize) -> (PathBuf, PathBuf) {
    let train = dir.join("train.fltd");
    let test = dir.join("test.fltd");
    let spec = |per_class, seed| SynthSpec { per_class, seed, ..SynthSpec::default() };
    save_dataset(&train, &make_synthetic(&spec(train_per_class, 1)).unwrap()).unwrap();
    save_dataset(&test, &make_synthetic(&spec(test_per_class, 2)).unwrap()).unwrap();
    (train, test)
}

/// Small, fast configuration; `patch` is merged over it key by key.
pub fn config(dir: &Path, out: &str, patch: Json) -> ExperimentConfig {
    let mut base = json!({
        "run_id": "t",
        "mode": "float",
        "seed": 0,
        "model": {"widths": [8, 16], "strides": [1, 2]},
        "train": {"epochs": 1, "batch_size": 32, "learning_rate": 0.05,
                  "attack": {"epsilon": 0.1, "steps": 2, "step_size": 0.05}},
        "eval": {"epsilon": 0.1, "attacks": ["pgd3"], "lambda_n": [0.0, 1.0]},
        "paths": {"train": dir.join("train.fltd"), "test": dir.join("test.fltd"), "out": dir.join(out)}
    });
    merge(&mut base, patch);
    ExperimentConfig::from_json(&base.to_string()).unwrap()
}

fn merge(base: &mut Json, patch: Json) {
    match (base, patch) {
        (Json::Object(b), Json::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// `(non-zero, total)` over every stored conv and classifier weight tensor.
pub fn stored_weight_nonzeros(ck: &Checkpoint) -> (usize, usize) {
    let mut nonzero = 0;
    let mut total = 0;
    for (name, value) in &ck.records {
        let is_weight = name == "fc.theta" || (name.starts_with("conv") && name.ends_with(".theta") && name.matches('.').count() == 1);
        if let (true, Value::Tensor(t)) = (is_weight, value) {
            total += t.len();
            nonzero += t.data().iter().filter(|v| **v != 0.0).count();
        }
    }
    (nonzero, total)
}

/// `(non-zero, total)` over the conv and classifier weights of a live network.
pub fn network_weight_nonzeros(net: &Network<f32>) -> (usize, usize) {
    net.noisy_weights().iter().fold((0, 0), |(nz, tot), w| {
        (nz + w.theta.value.data().iter().filter(|v| **v != 0.0).count(), tot + w.theta.len())
    })
}

/// Plain-loop forward pass in f64 with explicit weights and batch-norm statistics.
///
/// `noise` scales each layer's cached noise; `adversarial` picks the batch-norm set.
pub fn reference_logits(net: &Network<f32>, x: &[f32], n: usize, noise: f64, adversarial: bool) -> Vec<f64> {
    let arch = &net.arch;
    let (mut c, mut h, mut w) = (arch.in_channels, arch.height, arch.width);
    let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let effective = |nw: &float_core::conditioning::NoisyWeight<f32>| -> Vec<f64> {
        let alpha = nw.alpha() as f64;
        let eta = nw.eta().expect("noise sampled");
        nw.theta.value.data().iter().zip(eta).map(|(&t, &e)| t as f64 + noise * alpha * e as f64).collect()
    };
    for layer in &net.convs {
        let s = layer.spec;
        let co = s.out_channels;
        let ho = (h + 2 * s.padding - s.kernel) / s.stride + 1;
        let wo = (w + 2 * s.padding - s.kernel) / s.stride + 1;
        let wt = effective(&layer.weight);
        let bn = if adversarial { &layer.norms[0].adversarial } else { &layer.norms[0].clean };
        let mut out = vec![0.0; n * co * ho * wo];
        for b in 0..n {
            for o in 0..co {
                let scale = bn.gamma.value.data()[o] as f64 / (bn.running_var[o] as f64 + 1e-5).sqrt();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..s.kernel {
                                for kx in 0..s.kernel {
                                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += act[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                            * wt[((o * c + ci) * s.kernel + ky) * s.kernel + kx];
                                    }
                                }
                            }
                        }
                        let y = (acc - bn.running_mean[o] as f64) * scale + bn.beta.value.data()[o] as f64;
                        out[((b * co + o) * ho + oy) * wo + ox] = y.max(0.0);
                    }
                }
            }
        }
        act = out;
        (c, h, w) = (co, ho, wo);
    }
    let plane = (h * w) as f64;
    let pooled: Vec<f64> = act.chunks(h * w).map(|p| p.iter().sum::<f64>() / plane).collect();
    let fc = effective(&net.fc);
    let classes = arch.n_classes;
    let mut logits = vec![0.0; n * classes];
    for b in 0..n {
        for k in 0..classes {
            let dot: f64 = (0..c).map(|j| pooled[b * c + j] * fc[k * c + j]).sum();
            logits[b * classes + k] = dot + net.fc_bias.value.data()[k] as f64;
        }
    }
    logits
}
