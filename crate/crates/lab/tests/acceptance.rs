//! Acceptance checks. Runs every criterion in order, prints one line each and
//! exits non-zero if any of them failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path as FsPath;
use std::time::Instant;

use common::{config, network_weight_nonzeros, stored_weight_nonzeros};
use float_core::attacks::{fgsm, pgd_attack, AttackConfig};
use float_core::autodiff::{NormStats, Tape, Var};
use float_core::conditioning::{rescale_alpha, ConditionState};
use float_core::costmodel::{
    conv_delay, count_params_flops, float_conv_delay, max_oat_float_ratio, oat_conv_delay, ArchSpec, HwParams, LayerSpec, Variant,
};
use float_core::model::{ArchConfig, ConvSpec, Network, NormMode, Path};
use float_core::rng::Stream;
use float_core::training::{Granularity, Trainer};
use float_core::Tensor;
use float_lab::checkpoint::save_trainer;
use float_lab::config::ExperimentConfig;
use float_lab::dataset::{load_dataset, save_dataset};
use float_lab::run::{run, CHECKPOINT_FILE, METRICS_FILE};
use float_lab::synth::{make_synthetic, SynthSpec};
use serde_json::json;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// The desk task: 2 classes, 2000 train and 500 test images of 1×8×8.
fn desk_data(dir: &FsPath) {
    let spec = |per_class, seed| SynthSpec { per_class, seed, ..SynthSpec::default() };
    save_dataset(dir.join("train.fltd"), &make_synthetic(&spec(1000, 1)).unwrap()).unwrap();
    save_dataset(dir.join("test.fltd"), &make_synthetic(&spec(250, 2)).unwrap()).unwrap();
}

/// Default four-conv model, PGD-3 training at ε = 0.1 with step 0.033, PGD-7 evaluation.
fn desk_config(dir: &FsPath, out: &str, patch: serde_json::Value) -> ExperimentConfig {
    let mut cfg = config(
        dir,
        out,
        json!({
            "model": {"widths": [16, 32, 64, 128], "strides": [1, 1, 2, 2]},
            "train": {"epochs": 15, "batch_size": 64, "learning_rate": 0.05,
                      "attack": {"epsilon": 0.1, "steps": 3, "step_size": 0.033}},
            "eval": {"epsilon": 0.1, "attacks": ["pgd7"], "lambda_n": [0.0, 1.0], "lambda_th": 0.5}
        }),
    );
    if !patch.is_null() {
        let mut value = serde_json::to_value(&cfg).unwrap();
        merge(&mut value, patch);
        cfg = serde_json::from_value(value).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
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

fn random_tensor(rng: &mut Stream, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Worst relative error between tape gradients and central differences of `Σ r·f`.
fn finite_difference_error(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut rng = Stream::new(5, 0);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let cot: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grads = tape.backward_with(out, cot.clone()).unwrap();
    let objective = |xs: &[Tensor<f64>]| {
        let mut tp = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| tp.leaf(x.clone(), false)).collect();
        let o = build(&mut tp, &vs);
        tp.value(o).data().iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let scale = analytic[j].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((analytic[j] - numeric).abs() / scale);
        }
    }
    worst
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Stream::new(1, 0);
    let mut errors: Vec<(&str, f64)> = Vec::new();
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let x = random_tensor(&mut rng, &[2, 2, 5, 5]);
        let w = random_tensor(&mut rng, &[3, 2, 3, 3]);
        errors.push(("conv", finite_difference_error(&[x, w], &|tp, v| tp.conv2d(v[0], v[1], stride, pad).unwrap())));
    }
    let (x, w, b) = (random_tensor(&mut rng, &[3, 5]), random_tensor(&mut rng, &[4, 5]), random_tensor(&mut rng, &[4]));
    errors.push(("dense", finite_difference_error(&[x, w, b], &|tp, v| tp.dense(v[0], v[1], Some(v[2])).unwrap())));
    let (x, g, b) = (random_tensor(&mut rng, &[3, 2, 3, 3]), random_tensor(&mut rng, &[2]), random_tensor(&mut rng, &[2]));
    errors.push((
        "batch norm",
        finite_difference_error(&[x, g, b], &|tp, v| tp.batch_norm(v[0], v[1], v[2], NormStats::Batch).unwrap().0),
    ));
    let z = random_tensor(&mut rng, &[5, 3]).map(|v| 3.0 * v);
    errors.push(("cross entropy", finite_difference_error(&[z], &|tp, v| tp.cross_entropy(v[0], &[0, 2, 1, 1, 0]).unwrap())));
    let eta: Vec<f64> = (0..2 * 2 * 3 * 3).map(|_| rng.standard_normal()).collect();
    for lambda in [1.0, 0.4] {
        let theta = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let alpha = Tensor::new(&[1], vec![0.25]).unwrap();
        let x = random_tensor(&mut rng, &[2, 2, 4, 4]);
        let eta = eta.clone();
        errors.push((
            "noisy weight",
            finite_difference_error(&[theta, alpha, x], &move |tp, v| {
                let a = tp.value(v[1]).data()[0];
                let w = tp.noisy_weight(v[0], v[1], &eta, lambda * a, lambda).unwrap();
                tp.conv2d(v[2], w, 1, 1).unwrap()
            }),
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let (name, worst) = errors.iter().fold(("", 0.0), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    outcome(worst < 1e-4 && secs < 60.0, format!("worst relative error {worst:.2e} ({name}) < 1e-4, {secs:.2} s < 60 s"))
}

fn criterion_2() -> Outcome {
    let arch = ArchConfig {
        in_channels: 1,
        height: 6,
        width: 6,
        n_classes: 3,
        convs: vec![ConvSpec { out_channels: 4, kernel: 3, stride: 1, padding: 1 }, ConvSpec { out_channels: 6, kernel: 3, stride: 2, padding: 1 }],
    };
    let mut rng = Stream::new(2, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut range_ok = true;
    let mut equal = 0;
    let trials = 1000;
    for trial in 0..trials {
        let mut net = Network::<f32>::new(arch.clone(), &[1.0], trial as u64).unwrap();
        net.resample_noise(None).unwrap();
        let path = Path::infer(rng.uniform(0.0, 1.0), if rng.below(2) == 0 { 0.0 } else { 0.5 }, 0);
        let target = net.view(path);
        let batch = 1 + rng.below(4);
        let x: Vec<f32> = (0..batch * 36)
            .map(|_| match rng.below(10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.uniform(0.0, 1.0) as f32,
            })
            .collect();
        let x = Tensor::new(&[batch, 1, 6, 6], x).unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.below(3)).collect();
        let epsilon = if rng.below(10) == 0 { 0.0 } else { rng.uniform(0.0, 0.3) };
        let cfg = AttackConfig {
            epsilon,
            steps: 1 + rng.below(5),
            step_size: rng.uniform(0.001, 0.2),
            random_start: rng.below(2) == 0,
            clip_min: 0.0,
            clip_max: 1.0,
        };
        let mut attack_rng = Stream::new(trial as u64, 9);
        let candidates = [
            pgd_attack(&target, &x, &labels, &cfg, Some(&mut attack_rng)).unwrap(),
            fgsm(&target, &x, &labels, &cfg).unwrap(),
        ];
        for adv in &candidates {
            for (&a, &o) in adv.data().iter().zip(x.data()) {
                worst_excess = worst_excess.max((a as f64 - o as f64).abs() - epsilon);
                range_ok &= (0.0..=1.0).contains(&a);
            }
        }
        let one_step = AttackConfig { steps: 1, step_size: epsilon * rng.uniform(1.0, 3.0), random_start: false, ..cfg };
        let one_step = if one_step.step_size > 0.0 { one_step } else { AttackConfig { step_size: 0.1, ..one_step } };
        let p = pgd_attack(&target, &x, &labels, &one_step, None).unwrap();
        let f = fgsm(&target, &x, &labels, &AttackConfig { step_size: epsilon.max(1e-3), ..one_step }).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&p) == bits(&f) {
            equal += 1;
        }
    }
    let pass = worst_excess <= 1e-9 && range_ok && equal == trials;
    outcome(
        pass,
        format!(
            "{trials} trials: max(|x̂-x|∞ - ε) = {worst_excess:.3e} <= 1e-9, in [0,1]: {range_ok}, one-step PGD == FGSM bitwise in {equal}/{trials}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    desk_data(dir.path());
    let start = Instant::now();
    let mut sums = [0.0f64; 4];
    let seeds = [0u64, 1, 2];
    let mut per_seed = Vec::new();
    for seed in seeds {
        let cfg = desk_config(dir.path(), &format!("seed{seed}"), json!({"seed": seed}));
        let rows = run(&cfg).unwrap().final_rows;
        let at = |l: f64| rows.iter().find(|r| r.lambda_n == l).expect("row present");
        let (r0, r1) = (at(0.0), at(1.0));
        per_seed.push(format!("s{seed}: CA {:.1}/{:.1} RA {:.1}/{:.1}", r0.ca_percent, r1.ca_percent, r0.ra_percent, r1.ra_percent));
        for (s, v) in sums.iter_mut().zip([r0.ca_percent, r1.ca_percent, r0.ra_percent, r1.ra_percent]) {
            *s += v / seeds.len() as f64;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let [ca0, ca1, ra0, ra1] = sums;
    let pass = ra1 - ra0 >= 10.0 && ca0 - ca1 >= 2.0 && secs < 600.0;
    outcome(
        pass,
        format!(
            "mean RA(1)-RA(0) = {:.2} >= 10, CA(0)-CA(1) = {:.2} >= 2, {secs:.0} s < 600 s [{}]",
            ra1 - ra0,
            ca0 - ca1,
            per_seed.join("; ")
        ),
    )
}

fn small_data(dir: &FsPath, per_class: usize) {
    let spec = |per_class, seed| SynthSpec { per_class, seed, ..SynthSpec::default() };
    save_dataset(dir.join("train.fltd"), &make_synthetic(&spec(per_class, 1)).unwrap()).unwrap();
    save_dataset(dir.join("test.fltd"), &make_synthetic(&spec(per_class / 2, 2)).unwrap()).unwrap();
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), 100);
    let trained = run(&config(dir.path(), "out", json!({"train": {"epochs": 2}}))).unwrap().trainer.net;
    let test = load_dataset(dir.path().join("test.fltd")).unwrap();
    let (x, _) = test.gather(&(0..test.len()).collect::<Vec<_>>()).unwrap();
    let bits = |t: Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let running = |condition| Path { condition, norm: NormMode::Running, width: 0 };
    let clean_ref = bits(trained.logits(&x, running(ConditionState::clean())).unwrap());
    let noisy_ref = bits(trained.logits(&x, running(ConditionState::adversarial())).unwrap());
    let mut checks = Vec::new();
    for th in [0.0, 0.5] {
        checks.push(bits(trained.logits(&x, Path::infer(0.0, th, 0)).unwrap()) == clean_ref);
        checks.push(bits(trained.logits(&x, Path::infer(1.0, th, 0)).unwrap()) == noisy_ref);
    }
    let distinct = clean_ref != noisy_ref;
    let ok = checks.iter().filter(|c| **c).count();
    outcome(
        ok == checks.len() && distinct,
        format!("{ok}/{} inference endpoints bitwise equal to the training paths (λ_th ∈ {{0, 0.5}}, {} samples)", checks.len(), test.len()),
    )
}

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();
    let alphas32 = [0.25f32, 0.1, 0.37, 1.0, -0.6, 3.1e-3];
    let table = [(0.0, 0.0), (0.2, 0.4), (0.5, 1.0), (0.7, 0.4), (1.0, 1.0)];
    for &a in &alphas32 {
        for (ln, factor) in table {
            let got = rescale_alpha(a, ln, 0.5).unwrap();
            let want = (a as f64 * factor) as f32;
            if got.to_bits() != want.to_bits() {
                failures.push(format!("f32 α={a} λ_n={ln}: {got} != {want}"));
            }
        }
    }
    for &a in &[0.25f64, 0.1, 0.37, 1.0, -0.6] {
        for ln in [0.0, 0.2, 0.5, 0.7, 1.0] {
            let got = rescale_alpha(a, ln, 0.0).unwrap();
            if got.to_bits() != (ln * a).to_bits() {
                failures.push(format!("λ_th=0 α={a} λ_n={ln}: {got} != {}", ln * a));
            }
        }
    }
    let count = alphas32.len() * table.len() + 25;
    outcome(failures.is_empty(), if failures.is_empty() { format!("{count} cases exact") } else { failures.join("; ") })
}

fn channel_atomic(net: &Network<f32>, masks: &[Vec<bool>]) -> bool {
    net.noisy_weights().iter().zip(masks).all(|(w, m)| {
        let shape = w.theta.value.shape();
        let (co, ci) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        (0..ci).all(|c| {
            let first = m[c * inner];
            (0..co).all(|o| (0..inner).all(|k| m[(o * ci + c) * inner + k] == first))
        })
    })
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), 200);
    let train = load_dataset(dir.path().join("train.fltd")).unwrap();
    let mut problems = Vec::new();
    let mut checks = 0;
    let mut channel_density = Vec::new();
    for (mode, granularity) in [("floats_i", Granularity::Irregular), ("floats_c", Granularity::Channel)] {
        for d in [0.1, 0.3, 0.5] {
            let cfg = config(
                dir.path(),
                "out",
                json!({"mode": mode, "prune": {"density": d}, "train": {"epochs": 3}, "model": {"widths": [8, 16, 32], "strides": [1, 2, 2]}}),
            );
            let net = Network::<f32>::new(cfg.arch(1, 8, 8, 2), &[1.0], cfg.seed).unwrap();
            let mut trainer = Trainer::new(net, cfg.train_config()).unwrap();
            let mut tag = |ok: bool, what: String| {
                checks += 1;
                if !ok {
                    problems.push(what);
                }
            };
            // Irregular masks must meet the global budget; channel masks keep at least one
            // channel per layer and are held to their own active count instead.
            let budget_ok = |t: &Trainer<f32>| {
                let (nz, total) = network_weight_nonzeros(&t.net);
                match granularity {
                    Granularity::Irregular => nz as f64 <= d * total as f64,
                    Granularity::Channel => nz <= t.mask.as_ref().unwrap().active(),
                }
            };
            tag(budget_ok(&trainer), format!("{mode} d={d}: budget after init"));
            while !trainer.is_finished() {
                let before = trainer.mask.as_ref().unwrap().active();
                let m = trainer.train_epoch(&train).unwrap();
                let after = trainer.mask.as_ref().unwrap().active();
                let e = m.epoch;
                tag(budget_ok(&trainer), format!("{mode} d={d}: budget after epoch {e}"));
                if let Some(report) = &m.prune {
                    match granularity {
                        Granularity::Irregular => tag(
                            report.pruned == report.regrown && before == after,
                            format!("{mode} d={d}: epoch {e} pruned {} regrew {} active {before}->{after}", report.pruned, report.regrown),
                        ),
                        Granularity::Channel => tag(report.regrown <= report.pruned && after <= before, format!("{mode} d={d}: epoch {e} grew")),
                    }
                }
                if granularity == Granularity::Channel {
                    tag(channel_atomic(&trainer.net, &trainer.mask.as_ref().unwrap().layers), format!("{mode} d={d}: split channel"));
                }
            }
            let (nz, total) = stored_weight_nonzeros(&save_trainer(&cfg, &trainer));
            match granularity {
                Granularity::Irregular => tag(nz as f64 <= d * total as f64, format!("{mode} d={d}: checkpoint holds {nz} of {total}")),
                Granularity::Channel => {
                    tag(nz <= trainer.mask.as_ref().unwrap().active(), format!("{mode} d={d}: checkpoint exceeds its mask"));
                    channel_density.push(format!("{d}->{:.3}", trainer.mask.as_ref().unwrap().achieved_density()));
                }
            }
        }
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!("{checks} budget, conservation and atomicity checks hold; achieved channel-mode density {}", channel_density.join(", "))
    } else {
        problems.join("; ")
    };
    outcome(pass, detail)
}

fn criterion_7() -> Outcome {
    // Gradient support of the half-width pass.
    let arch = ArchConfig::desk_cnn(1, 8, 8, 2);
    let mut net = Network::<f32>::new(arch, &[1.0, 0.5], 3).unwrap();
    net.resample_noise(None).unwrap();
    let data = make_synthetic(&SynthSpec { per_class: 8, ..SynthSpec::default() }).unwrap();
    let (x, y) = data.gather(&(0..16).collect::<Vec<_>>()).unwrap();
    let mut support_ok = true;
    for lambda in [false, true] {
        let mut tape = Tape::new();
        let path = Path::train(lambda, 1);
        let bound = net.bind(&mut tape, path, true).unwrap();
        let xv = tape.leaf(x.clone(), false);
        let out = net.forward(&mut tape, xv, &bound).unwrap();
        let loss = tape.cross_entropy(out.logits, &y).unwrap();
        let grads = tape.backward(loss, 1.0).unwrap();
        for w in net.noisy_weights_mut() {
            w.theta.zero_grad();
        }
        net.accumulate_grads(&bound, &grads).unwrap();
        let widths = net.widths(1).unwrap();
        for (layer, &(keep_out, keep_in)) in net.convs.iter().zip(&widths) {
            let shape = layer.weight.theta.value.shape();
            let (ci, inner) = (shape[1], shape[2] * shape[3]);
            let g = &layer.weight.theta.grad;
            let mut inside = false;
            for o in 0..shape[0] {
                for c in 0..ci {
                    let block = &g[(o * ci + c) * inner..(o * ci + c + 1) * inner];
                    if o < keep_out && c < keep_in {
                        inside |= block.iter().any(|v| *v != 0.0);
                    } else {
                        support_ok &= block.iter().all(|v| *v == 0.0);
                    }
                }
            }
            support_ok &= inside && keep_out == shape[0].div_ceil(2);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    desk_data(dir.path());
    let cfg = desk_config(
        dir.path(),
        "slim",
        json!({"mode": "floats_slim", "slim": {"factors": [1.0, 0.5]}, "train": {"epochs": 8}, "eval": {"lambda_n": [0.0]}}),
    );
    let rows = run(&cfg).unwrap().final_rows;
    let ca = |sf: f64| rows.iter().find(|r| r.slim_factor == sf && r.lambda_n == 0.0).expect("row").ca_percent;
    let (full, half) = (ca(1.0), ca(0.5));
    let pass = support_ok && full >= 75.0 && half >= 75.0;
    outcome(pass, format!("0.5-slice gradient confined to leading filters: {support_ok}; CA(1.0) = {full:.1}, CA(0.5) = {half:.1} >= 75"))
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a / b + u128::from(a % b != 0)
}

/// Delay equations evaluated directly from their definitions.
fn delay_oracle(k: u64, ci: u64, co: u64, ho: u64, wo: u64, hw: &HwParams) -> [f64; 3] {
    let kcc = (k * k * ci * co) as u128;
    let film = (2 * co + 4 * co * co) as u128;
    // words per cycle is (B_IO / B_W)·N_bank; multiply through to stay in integers
    let reads = |n: u128| ceil_div(n * hw.b_w as u128, hw.b_io as u128 * hw.n_bank as u128) as f64;
    let mults = |n: u128| ceil_div(n, hw.n_mult as u128) as f64;
    let plane = (ho * wo) as f64;
    let plain = reads(kcc) * hw.tau_read + mults(kcc) * plane * hw.tau_mult;
    let float = reads(kcc) * hw.tau_read + mults(kcc) * (1.0 + plane) * hw.tau_mult;
    let oat = reads(kcc + film) * hw.tau_read + (mults(kcc) * plane + mults(film)) * hw.tau_mult;
    [plain, float, oat]
}

fn criterion_8() -> Outcome {
    let mut rng = Stream::new(8, 0);
    let mut mismatches = 0;
    for _ in 0..50 {
        let pick = |rng: &mut Stream, lo: u64, hi: u64| lo + rng.below((hi - lo + 1) as usize) as u64;
        let hw = HwParams {
            b_w: [1, 2, 4, 8, 16][rng.below(5)],
            b_io: pick(&mut rng, 16, 512),
            n_bank: pick(&mut rng, 1, 32),
            n_mult: pick(&mut rng, 1, 4096),
            tau_read: rng.uniform(0.5, 20.0),
            tau_mult: rng.uniform(0.5, 20.0),
        };
        let (k, ci, co, ho, wo) = (pick(&mut rng, 1, 7), pick(&mut rng, 1, 512), pick(&mut rng, 1, 512), pick(&mut rng, 1, 64), pick(&mut rng, 1, 64));
        let l = LayerSpec::conv(k, ci, co, ho, wo);
        let got = [conv_delay(&l, &hw).unwrap(), float_conv_delay(&l, &hw).unwrap(), oat_conv_delay(&l, &hw).unwrap()];
        if got != delay_oracle(k, ci, co, ho, wo, &hw) {
            mismatches += 1;
        }
    }
    let arch = ArchSpec::resnet34(10);
    let hw = HwParams::default();
    let float = count_params_flops(&arch, Variant::Float).unwrap();
    let oat = count_params_flops(&arch, Variant::Oat).unwrap();
    let ratio = max_oat_float_ratio(&arch, &hw).unwrap();
    let within = |v: f64, target: f64, tol: f64| (v - target).abs() <= tol * target;
    let float_m = float.params as f64 / 1e6;
    let oat_m = oat.params as f64 / 1e6;
    let gflops = float.flops as f64 / 1e9;
    let overhead = 100.0 * float.noise_overhead();
    let subs = [
        (mismatches == 0, format!("delay equations {}/50 exact", 50 - mismatches)),
        (within(float_m, 21.28, 0.02), format!("float params {float_m:.3} M")),
        (within(oat_m, 31.4, 0.05), format!("oat params {oat_m:.3} M")),
        (within(gflops, 1.165, 0.02), format!("{gflops:.4} GFLOPs")),
        ((1.41..=1.91).contains(&ratio), format!("max oat/float delay ratio {ratio:.4}")),
        ((overhead - 1.18).abs() <= 0.2, format!("noise-add overhead {overhead:.3}% (target 1.18 ± 0.2)")),
    ];
    let failed: Vec<&str> = subs.iter().filter(|s| !s.0).map(|s| s.1.as_str()).collect();
    let all: Vec<String> = subs.iter().map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "FAILED " })).collect();
    outcome(failed.is_empty(), all.join(", "))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), 100);
    let cfg = config(dir.path(), "out", json!({"mode": "floats_i", "prune": {"density": 0.5}, "train": {"epochs": 2}, "eval": {"lambda_n": [0.0, 0.2, 0.7, 1.0]}}));
    let read = |f: &str| std::fs::read(dir.path().join("out").join(f)).unwrap();
    run(&cfg).unwrap();
    let first = (read(METRICS_FILE), read(CHECKPOINT_FILE));
    run(&cfg).unwrap();
    let second = (read(METRICS_FILE), read(CHECKPOINT_FILE));
    let metrics_same = first.0 == second.0;
    let ckpt_same = first.1 == second.1;
    outcome(
        metrics_same && ckpt_same,
        format!("metrics identical: {metrics_same} ({} B), checkpoint identical: {ckpt_same} ({} B)", first.0.len(), first.1.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "gradient suite", criterion_1),
        (2, "attack invariants", criterion_2),
        (3, "desk trade-off", criterion_3),
        (4, "boundary equivalence", criterion_4),
        (5, "noise rescaling table", criterion_5),
        (6, "sparsity budget", criterion_6),
        (7, "slimmable widths", criterion_7),
        (8, "cost model", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {verdict} {name} ({:.1} s): {}", start.elapsed().as_secs_f64(), result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
