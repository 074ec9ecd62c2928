//! Cost tables and checkpoint reports.

use float_core::costmodel::{count_params_flops, layer_costs, ArchSpec, HwParams, LayerKind, Variant};
use float_core::training::{nonzero_density, Trainer};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{Result, Stage};
use crate::run::active_params;

pub const COST_HEADER: &str = "index,kind,k,c_in,c_out,h_out,w_out,conditioned,shortcut,conv_ns,float_ns,oat_ns,oat_over_float";

/// Per-conv delay table as CSV text.
pub fn cost_csv(arch: &ArchSpec, hw: &HwParams) -> Result<String> {
    let mut out = format!("{COST_HEADER}\n");
    for c in layer_costs(arch, hw).stage("cost")? {
        let l = c.layer;
        let kind = match l.kind {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.6}\n",
            c.index, kind, l.k, l.c_in, l.c_out, l.h_out, l.w_out, l.conditioned, l.shortcut, c.conv_ns, c.float_ns, c.oat_ns,
            c.oat_over_float()
        ));
    }
    Ok(out)
}

/// Network totals and delay-ratio extremes over the conditioned convs.
pub fn cost_totals(arch: &ArchSpec, hw: &HwParams) -> Result<Value> {
    let f = count_params_flops(arch, Variant::Float).stage("cost")?;
    let o = count_params_flops(arch, Variant::Oat).stage("cost")?;
    let ratios: Vec<f64> = layer_costs(arch, hw).stage("cost")?.iter().filter(|c| c.layer.conditioned).map(|c| c.oat_over_float()).collect();
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(json!({
        "arch": arch.name,
        "hw": {
            "b_io": hw.b_io, "b_w": hw.b_w, "n_bank": hw.n_bank, "n_mult": hw.n_mult,
            "tau_read_ns": hw.tau_read, "tau_mult_ns": hw.tau_mult,
        },
        "float": {
            "params": f.params, "flops": f.flops, "noise_add_ops": f.noise_add_ops,
            "noise_overhead_percent": 100.0 * f.noise_overhead(),
        },
        "oat": { "params": o.params, "flops": o.flops },
        "param_ratio_oat_over_float": o.params as f64 / f.params as f64,
        "conditioned_layers": ratios.len(),
        "delay_ratio_oat_over_float": { "min": min, "mean": mean, "max": max },
    }))
}

/// Layer-by-layer description of a stored run.
pub fn inspect(cfg: &ExperimentConfig, t: &Trainer<f32>) -> Result<Value> {
    let net = &t.net;
    let mut names: Vec<String> = (0..net.convs.len()).map(|i| format!("conv{i}")).collect();
    names.push("fc".into());
    let layers: Vec<Value> = net
        .noisy_weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let data = w.theta.value.data();
            let mask = t.mask.as_ref().map(|m| m.layers[i].iter().filter(|&&b| b).count());
            json!({
                "name": names[i],
                "shape": w.theta.value.shape(),
                "weights": data.len(),
                "nonzero": data.iter().filter(|v| **v != 0.0).count(),
                "mask_active": mask,
                "alpha": w.alpha(),
            })
        })
        .collect();
    let widths = (0..net.slim_factors.len())
        .map(|w| Ok(json!({ "slim_factor": net.slim_factors[w], "active_params": active_params(net, w)? })))
        .collect::<Result<Vec<Value>>>()?;
    let mask = t.mask.as_ref().map(|m| {
        json!({
            "granularity": format!("{:?}", m.granularity).to_lowercase(),
            "target_density": m.density,
            "achieved_density": m.achieved_density(),
            "within_budget": m.satisfies_budget(),
            "channel_atomic": m.is_channel_atomic(),
        })
    });
    Ok(json!({
        "run_id": cfg.run_id,
        "mode": cfg.mode,
        "epoch": t.epoch,
        "total_epochs": cfg.train.epochs,
        "nonzero_density": nonzero_density(net),
        "mask": mask,
        "layers": layers,
        "slices": widths,
    }))
}
