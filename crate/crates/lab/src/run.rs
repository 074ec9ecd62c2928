//! Training runs, evaluation tables and λ_n sweeps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use float_core::data::Dataset;
use float_core::model::Network;
use float_core::training::{evaluate, EpochMetrics, EvalSpec, Trainer};

use crate::checkpoint::{load_trainer, save_trainer, Checkpoint};
use crate::config::{ExperimentConfig, NamedAttack};
use crate::dataset::load_dataset;
use crate::error::{LabError, Result, Stage};
use crate::metrics::{MetricsRecord, MetricsWriter};

pub const CHECKPOINT_FILE: &str = "checkpoint.fltc";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SWEEP_FILE: &str = "sweep_metrics.csv";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";
/// Worker threads for evaluation; defaults to 1.
pub const THREADS_ENV: &str = "FLOAT_LAB_THREADS";

pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| LabError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
    }
}

/// Non-zero weights of the sub-network at slim index `width`, plus the classifier bias.
pub fn active_params(net: &Network<f32>, width: usize) -> Result<u64> {
    let widths = net.widths(width).stage("params")?;
    let mut total = 0u64;
    for (layer, &(c_out, c_in)) in net.convs.iter().zip(&widths) {
        let [_, full_in, kh, kw] = layer.weight.theta.value.dims4().stage("params")?;
        let data = layer.weight.theta.value.data();
        for o in 0..c_out {
            let start = o * full_in * kh * kw;
            total += data[start..start + c_in * kh * kw].iter().filter(|v| **v != 0.0).count() as u64;
        }
    }
    let last = widths.last().map_or(net.arch.in_channels, |w| w.0);
    let full_in = net.fc.theta.value.shape()[1];
    for row in net.fc.theta.value.data().chunks(full_in) {
        total += row[..last].iter().filter(|v| **v != 0.0).count() as u64;
    }
    Ok(total + net.fc_bias.len() as u64)
}

/// What one evaluation table covers.
#[derive(Debug, Clone)]
pub struct EvalPlan {
    pub run_id: String,
    pub epoch: usize,
    pub lambda_n: Vec<f64>,
    pub lambda_th: f64,
    pub attacks: Vec<NamedAttack>,
    pub seed: u64,
    pub batch_size: usize,
    pub record_wall_time: bool,
}

/// One row per (slim factor, attack, λ_n), in that nesting order.
///
/// Jobs run on up to [`thread_count`] threads; results do not depend on the count.
pub fn evaluation_rows(trainer: &Trainer<f32>, data: &Dataset<f32>, plan: &EvalPlan) -> Result<Vec<MetricsRecord>> {
    if plan.lambda_n.is_empty() {
        return Err(LabError::Config("lambda_n set is empty".into()));
    }
    let net = &trainer.net;
    let masks = trainer.mask.as_ref().map(|m| m.layers.as_slice());
    let density = trainer.density();
    let mut jobs = Vec::new();
    for w in 0..net.slim_factors.len() {
        for a in &plan.attacks {
            for &ln in &plan.lambda_n {
                jobs.push((w, a, ln));
            }
        }
    }
    let threads = thread_count()?.min(jobs.len());
    let run_job = |&(w, a, ln): &(usize, &NamedAttack, f64)| -> Result<MetricsRecord> {
        let start = Instant::now();
        let spec = EvalSpec {
            lambda_n: vec![ln],
            lambda_th: plan.lambda_th,
            attack: a.config,
            seed: plan.seed,
            width: w,
            batch_size: plan.batch_size,
        };
        let row = evaluate(net, masks, data, &spec).stage("evaluate")?[0];
        Ok(MetricsRecord {
            run_id: plan.run_id.clone(),
            epoch: plan.epoch,
            lambda_n: ln,
            lambda_th: plan.lambda_th,
            ca_percent: row.ca,
            ra_percent: row.ra,
            attack_name: a.name.clone(),
            density,
            slim_factor: net.slim_factors[w],
            params: active_params(net, w)?,
            wall_ms: if plan.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
        })
    };
    if threads <= 1 {
        return jobs.iter().map(run_job).collect();
    }
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<Vec<MetricsRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(run_job).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub epochs: Vec<EpochMetrics>,
    /// Rows of the last evaluation (empty when no epoch ran).
    pub final_rows: Vec<MetricsRecord>,
    pub trainer: Trainer<f32>,
}

fn check_geometry(train: &Dataset<f32>, test: &Dataset<f32>) -> Result<()> {
    let g = |d: &Dataset<f32>| (d.channels, d.height, d.width, d.n_classes);
    if g(train) != g(test) {
        return Err(LabError::Config(format!("train geometry {:?} differs from test {:?}", g(train), g(test))));
    }
    Ok(())
}

const TRAIN_LOG_HEADER: &str = "epoch,lr,loss_clean,loss_adv,loss,acc_clean,acc_adv,density,pruned,regrown";

fn train_log_line(m: &EpochMetrics) -> String {
    let (p, r) = m.prune.as_ref().map_or((0, 0), |r| (r.pruned, r.regrown));
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        m.epoch, m.lr, m.loss_clean, m.loss_adv, m.loss, m.acc_clean, m.acc_adv, m.density, p, r
    )
}

/// Trains per `cfg`, writing a checkpoint after initialization and after every
/// epoch, a per-epoch training log, and evaluation rows to the metrics file.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let train = load_dataset(&cfg.paths.train)?;
    let test = load_dataset(&cfg.paths.test)?;
    check_geometry(&train, &test)?;
    let arch = cfg.arch(train.channels, train.height, train.width, train.n_classes);
    let net = Network::<f32>::new(arch, &cfg.slim_factors(), cfg.seed).stage("initialize")?;
    let mut trainer = Trainer::new(net, cfg.train_config()).stage("initialize")?;
    let out = &cfg.paths.out;
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    save_trainer(cfg, &trainer).save(&ckpt_path)?;
    let mut metrics = MetricsWriter::create(out.join(METRICS_FILE))?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = std::fs::File::create(&log_path).map_err(|e| LabError::io(&log_path, e))?;
    writeln!(log, "{TRAIN_LOG_HEADER}").map_err(|e| LabError::io(&log_path, e))?;
    let attacks = cfg.eval_attacks()?;
    let mut epochs = Vec::new();
    let mut final_rows = Vec::new();
    while !trainer.is_finished() {
        let m = trainer.train_epoch(&train).stage("train")?;
        writeln!(log, "{}", train_log_line(&m)).map_err(|e| LabError::io(&log_path, e))?;
        save_trainer(cfg, &trainer).save(&ckpt_path)?;
        let done = trainer.epoch;
        let due = trainer.is_finished() || (cfg.eval.every > 0 && done % cfg.eval.every == 0);
        if due {
            let plan = EvalPlan {
                run_id: cfg.run_id.clone(),
                epoch: done,
                lambda_n: cfg.eval.lambda_n.clone(),
                lambda_th: cfg.eval.lambda_th,
                attacks: attacks.clone(),
                seed: cfg.eval.seed,
                batch_size: cfg.eval.batch_size,
                record_wall_time: cfg.record_wall_time,
            };
            final_rows = evaluation_rows(&trainer, &test, &plan)?;
            metrics.append(&final_rows)?;
        }
        epochs.push(m);
    }
    Ok(RunOutcome { out_dir: out.clone(), epochs, final_rows, trainer })
}

/// Sweep settings applied to a stored checkpoint.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub lambda_n: Vec<f64>,
    pub lambda_th: f64,
    pub attacks: Vec<NamedAttack>,
    pub seed: u64,
    pub batch_size: usize,
}

/// Evaluates a checkpoint over `spec` and writes the metrics rows and a
/// plot-ready `attack,slim_factor,lambda_th,lambda_n,ca_percent,ra_percent` table into `out`.
pub fn sweep(checkpoint: &Path, data: &Dataset<f32>, spec: &SweepSpec, out: &Path) -> Result<Vec<MetricsRecord>> {
    if spec.lambda_n.is_empty() {
        return Err(LabError::Config("lambda_n set is empty".into()));
    }
    if spec.attacks.is_empty() {
        return Err(LabError::Config("no attacks given".into()));
    }
    let (cfg, trainer) = load_trainer(&Checkpoint::load(checkpoint)?)?;
    let net = &trainer.net;
    if (net.arch.in_channels, net.arch.height, net.arch.width, net.arch.n_classes) != (data.channels, data.height, data.width, data.n_classes) {
        return Err(LabError::Config("dataset geometry does not match the checkpoint".into()));
    }
    let plan = EvalPlan {
        run_id: cfg.run_id.clone(),
        epoch: trainer.epoch,
        lambda_n: spec.lambda_n.clone(),
        lambda_th: spec.lambda_th,
        attacks: spec.attacks.clone(),
        seed: spec.seed,
        batch_size: spec.batch_size,
        record_wall_time: cfg.record_wall_time,
    };
    let rows = evaluation_rows(&trainer, data, &plan)?;
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    MetricsWriter::create(out.join(SWEEP_FILE))?.append(&rows)?;
    let path = out.join(TRADEOFF_FILE);
    let mut text = String::from("attack,slim_factor,lambda_th,lambda_n,ca_percent,ra_percent\n");
    for r in &rows {
        text.push_str(&format!("{},{},{},{},{},{}\n", r.attack_name, r.slim_factor, r.lambda_th, r.lambda_n, r.ca_percent, r.ra_percent));
    }
    std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
    Ok(rows)
}
