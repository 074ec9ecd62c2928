//! FLOAT training: half-clean/half-adversarial batches, optional sparse masks and slimmable widths.

mod mask;

pub use mask::{
    allocate, apply_mask, channel_scores, init_mask, layer_momentum_rank, prune_rate, prune_regrow, Granularity,
    LayerMomentumRank, PruneMask, PruneRegrowReport,
};

use alloc::vec::Vec;

use crate::attacks::{pgd_attack, AttackConfig};
use crate::autodiff::optim::{cosine_lr, sgd_step, OptimizerConfig, ParamRole};
use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::config_err;
use crate::model::{argmax_rows, Network, Path};
use crate::rng::{self, Stream, StreamState};
use crate::{Error, Real, Result, Tensor};

/// Sparse-training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    pub density: f64,
    pub granularity: Granularity,
    /// Fraction of active weights pruned after the first epoch; decays to 0 on a cosine.
    pub initial_prune_rate: f64,
}

impl PruneConfig {
    pub fn new(density: f64, granularity: Granularity) -> Self {
        Self { density, granularity, initial_prune_rate: 0.3 }
    }
}

/// Slimming factors trained jointly; must match the network's factor set.
#[derive(Debug, Clone, PartialEq)]
pub struct SlimConfig {
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub attack: AttackConfig,
    pub optimizer: OptimizerConfig,
    pub prune: Option<PruneConfig>,
    pub slim: Option<SlimConfig>,
    pub seed: u64,
    /// When false the noise scales α stay at their current values.
    pub train_alpha: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(config_err!("batch size must be even and at least 2, got {}", self.batch_size));
        }
        self.attack.validate()?;
        self.optimizer.validate()?;
        if self.optimizer.total_epochs < self.epochs {
            return Err(config_err!(
                "optimizer schedule covers {} epochs but training runs {}",
                self.optimizer.total_epochs,
                self.epochs
            ));
        }
        if let Some(p) = &self.prune {
            if !(p.density > 0.0 && p.density <= 1.0) {
                return Err(config_err!("density must lie in (0, 1], got {}", p.density));
            }
            if !(0.0..1.0).contains(&p.initial_prune_rate) {
                return Err(config_err!("prune rate must lie in [0, 1), got {}", p.initial_prune_rate));
            }
        }
        Ok(())
    }
}

/// Losses and accuracies of one optimizer step, averaged over slimming factors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepMetrics {
    pub loss_clean: f64,
    pub loss_adv: f64,
    pub loss: f64,
    pub correct_clean: usize,
    pub correct_adv: usize,
    pub samples_per_half: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    pub loss_clean: f64,
    pub loss_adv: f64,
    pub loss: f64,
    pub acc_clean: f64,
    pub acc_adv: f64,
    pub prune: Option<PruneRegrowReport>,
    pub density: f64,
}

/// Owns the network, optimizer state, mask, and random streams of one run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub net: Network<T>,
    pub cfg: TrainConfig,
    pub mask: Option<PruneMask>,
    /// Number of completed epochs.
    pub epoch: usize,
    data_rng: Stream,
    attack_rng: Stream,
}

/// Random-stream positions of a trainer, for checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainerStreams {
    pub data: StreamState,
    pub attack: StreamState,
}

impl<T: Real> Trainer<T> {
    /// Validates `cfg`, draws the initial mask (if any) and applies it.
    pub fn new(mut net: Network<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(slim) = &cfg.slim {
            let mut f = slim.factors.clone();
            f.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
            f.dedup();
            if f != net.slim_factors {
                return Err(config_err!("slim factors {:?} do not match network {:?}", slim.factors, net.slim_factors));
            }
        } else if net.slim_factors.len() > 1 {
            return Err(config_err!("network has slim factors {:?} but no slim config", net.slim_factors));
        }
        for w in 0..net.slim_factors.len() {
            net.widths(w)?;
        }
        let mask = match &cfg.prune {
            Some(p) => {
                let mut rng = Stream::new(cfg.seed, rng::MASK_INIT);
                let m = init_mask(&net, p.density, p.granularity, &mut rng)?;
                apply_mask(&mut net, &m)?;
                Some(m)
            }
            None => None,
        };
        Ok(Self {
            data_rng: Stream::new(cfg.seed, rng::DATA_ORDER),
            attack_rng: Stream::new(cfg.seed, rng::ATTACK_START),
            net,
            cfg,
            mask,
            epoch: 0,
        })
    }

    /// Rebuilds a trainer from checkpointed parts without touching the mask or streams.
    pub fn from_parts(net: Network<T>, cfg: TrainConfig, mask: Option<PruneMask>, epoch: usize, streams: TrainerStreams) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            net,
            cfg,
            mask,
            epoch,
            data_rng: Stream::restore(streams.data),
            attack_rng: Stream::restore(streams.attack),
        })
    }

    pub fn streams(&self) -> TrainerStreams {
        TrainerStreams { data: self.data_rng.state(), attack: self.attack_rng.state() }
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn masks(&self) -> Option<&[Vec<bool>]> {
        self.mask.as_ref().map(|m| m.as_slices())
    }

    /// One optimizer step on a batch split into a clean half and a half to be attacked.
    ///
    /// For every slimming factor (widest first) the loss is `0.5·L_C + 0.5·L_A`,
    /// the adversarial half being regenerated against that width's λ=1 path.
    /// Gradients are summed over factors, then a single masked SGD step is taken.
    pub fn step(&mut self, x_clean: &Tensor<T>, y_clean: &[usize], x_adv: &Tensor<T>, y_adv: &[usize], lr: f64) -> Result<StepMetrics> {
        if x_clean.shape() != x_adv.shape() || y_clean.len() != y_adv.len() {
            return Err(Error::Dimension("clean and adversarial halves differ in size".into()));
        }
        let masks = self.mask.as_ref().map(|m| m.layers.clone());
        self.net.resample_noise(masks.as_deref())?;
        let widths = self.net.slim_factors.len();
        let half = T::from_f64(0.5);
        let mut m = StepMetrics { samples_per_half: y_clean.len(), ..StepMetrics::default() };
        for w in 0..widths {
            let clean = Path::train(false, w);
            let (lc, correct) = self.half_pass(x_clean, y_clean, clean, half)?;
            let adv = Path::train(true, w);
            let attacked = pgd_attack(&self.net.view(adv), x_adv, y_adv, &self.cfg.attack, Some(&mut self.attack_rng))?;
            let (la, correct_a) = self.half_pass(&attacked, y_adv, adv, half)?;
            m.loss_clean += lc;
            m.loss_adv += la;
            m.correct_clean += correct;
            m.correct_adv += correct_a;
        }
        let k = widths as f64;
        m.loss_clean /= k;
        m.loss_adv /= k;
        m.loss = 0.5 * m.loss_clean + 0.5 * m.loss_adv;
        self.optimizer_step(lr)?;
        Ok(m)
    }

    /// Forward/backward of one half with gradient seed `seed`; updates that path's running stats.
    fn half_pass(&mut self, x: &Tensor<T>, y: &[usize], path: Path, seed: T) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, path, true)?;
        let xv = tape.leaf(x.clone(), false);
        let out = self.net.forward(&mut tape, xv, &bound)?;
        let loss = tape.cross_entropy(out.logits, y)?;
        let value = tape.value(loss).data()[0].as_f64();
        let correct = argmax_rows(tape.value(out.logits)).iter().zip(y).filter(|(p, l)| p == l).count();
        let grads = tape.backward(loss, seed)?;
        self.net.accumulate_grads(&bound, &grads)?;
        self.net.update_running_stats(path, &out.stats)?;
        Ok((value, correct))
    }

    fn optimizer_step(&mut self, lr: f64) -> Result<()> {
        let opt = self.cfg.optimizer;
        let train_alpha = self.cfg.train_alpha;
        let masks = self.mask.as_ref().map(|m| &m.layers);
        let mut weight_idx = 0;
        for p in self.net.params_mut() {
            match p.role {
                ParamRole::ConvWeight | ParamRole::FcWeight => {
                    let m = masks.map(|m| m[weight_idx].as_slice());
                    weight_idx += 1;
                    sgd_step(p, &opt, lr, m)?;
                }
                ParamRole::AlphaScale if !train_alpha => {}
                _ => sgd_step(p, &opt, lr, None)?,
            }
            p.zero_grad();
        }
        Ok(())
    }

    /// One pass over `data` in shuffled order, then (except after the last epoch) prune/regrow.
    ///
    /// The trailing partial batch is dropped.
    pub fn train_epoch(&mut self, data: &Dataset<T>) -> Result<EpochMetrics> {
        if self.is_finished() {
            return Err(Error::State(alloc::format!("training already ran {} epochs", self.epoch)));
        }
        let bs = self.cfg.batch_size;
        let batches = data.len() / bs;
        if batches == 0 {
            return Err(Error::Empty(alloc::format!("{} samples cannot fill a batch of {}", data.len(), bs)));
        }
        let lr = cosine_lr(self.epoch, &self.cfg.optimizer)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.data_rng.shuffle(&mut order);
        let mut sum = StepMetrics::default();
        for b in 0..batches {
            let idx = &order[b * bs..(b + 1) * bs];
            let (xc, yc) = data.gather(&idx[..bs / 2])?;
            let (xa, ya) = data.gather(&idx[bs / 2..])?;
            let s = self.step(&xc, &yc, &xa, &ya, lr)?;
            sum.loss_clean += s.loss_clean;
            sum.loss_adv += s.loss_adv;
            sum.loss += s.loss;
            sum.correct_clean += s.correct_clean;
            sum.correct_adv += s.correct_adv;
            sum.samples_per_half += s.samples_per_half;
        }
        let n = batches as f64;
        let seen = (sum.samples_per_half * self.net.slim_factors.len()) as f64;
        let epoch = self.epoch;
        self.epoch += 1;
        let prune = match (self.cfg.prune, self.mask.as_mut()) {
            (Some(p), Some(mask)) if self.epoch < self.cfg.epochs => {
                let rate = prune_rate(p.initial_prune_rate, epoch, self.cfg.epochs);
                let ranks = layer_momentum_rank(&self.net, mask);
                Some(prune_regrow(&mut self.net, mask, &ranks, rate)?)
            }
            _ => None,
        };
        Ok(EpochMetrics {
            epoch,
            lr,
            batches,
            loss_clean: sum.loss_clean / n,
            loss_adv: sum.loss_adv / n,
            loss: sum.loss / n,
            acc_clean: 100.0 * sum.correct_clean as f64 / seen,
            acc_adv: 100.0 * sum.correct_adv as f64 / seen,
            prune,
            density: self.density(),
        })
    }

    /// Fraction of non-zero entries across all maskable weights.
    pub fn density(&self) -> f64 {
        nonzero_density(&self.net)
    }

    /// Evaluation of the current network; see [`evaluate`].
    pub fn evaluate(&self, data: &Dataset<T>, spec: &EvalSpec) -> Result<Vec<EvalRow>> {
        evaluate(&self.net, self.masks(), data, spec)
    }
}

/// Non-zero fraction over every noisy weight tensor.
pub fn nonzero_density<T: Real>(net: &Network<T>) -> f64 {
    let (nz, total) = net.noisy_weights().iter().fold((0usize, 0usize), |(nz, t), w| {
        (nz + w.theta.value.data().iter().filter(|v| **v != T::zero()).count(), t + w.theta.len())
    });
    nz as f64 / total as f64
}

/// What to measure in [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub lambda_n: Vec<f64>,
    pub lambda_th: f64,
    pub attack: AttackConfig,
    /// Seeds the cached evaluation noise and any attack random start.
    pub seed: u64,
    /// Slim index of the evaluated sub-network (0 = full width).
    pub width: usize,
    pub batch_size: usize,
}

impl EvalSpec {
    /// λ_n ∈ {0, 0.2, 0.7, 1}.
    pub fn standard(lambda_th: f64, attack: AttackConfig, seed: u64) -> Self {
        Self { lambda_n: alloc::vec![0.0, 0.2, 0.7, 1.0], lambda_th, attack, seed, width: 0, batch_size: 256 }
    }
}

/// Clean and robust accuracy (percent) at one λ_n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub lambda_n: f64,
    pub lambda_th: f64,
    pub ca: f64,
    pub ra: f64,
}

/// Clean/robust accuracy for each λ_n using running BN statistics and noise drawn
/// once from `spec.seed`. Repeated calls with the same inputs agree bitwise.
pub fn evaluate<T: Real>(net: &Network<T>, masks: Option<&[Vec<bool>]>, data: &Dataset<T>, spec: &EvalSpec) -> Result<Vec<EvalRow>> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset is empty".into()));
    }
    if spec.batch_size == 0 {
        return Err(config_err!("evaluation batch size must be positive"));
    }
    spec.attack.validate()?;
    let net = net.with_eval_noise(spec.seed, masks)?;
    let mut rows = Vec::with_capacity(spec.lambda_n.len());
    for &ln in &spec.lambda_n {
        let path = Path::infer(ln, spec.lambda_th, spec.width);
        path.condition.noise_scale(T::zero())?;
        let mut rng = Stream::new(spec.seed, rng::ATTACK_START);
        let (mut clean, mut robust) = (0usize, 0usize);
        for chunk in data.chunks(spec.batch_size) {
            let (x, y) = chunk?;
            clean += count_correct(&net.predict(&x, path)?, &y);
            let xa = pgd_attack(&net.view(path), &x, &y, &spec.attack, Some(&mut rng))?;
            robust += count_correct(&net.predict(&xa, path)?, &y);
        }
        let n = data.len() as f64;
        rows.push(EvalRow { lambda_n: ln, lambda_th: spec.lambda_th, ca: 100.0 * clean as f64 / n, ra: 100.0 * robust as f64 / n });
    }
    Ok(rows)
}

fn count_correct(pred: &[usize], labels: &[usize]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}
