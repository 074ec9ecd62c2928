//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use float_core::attacks::AttackConfig;
use float_core::autodiff::optim::OptimizerConfig;
use float_core::model::{ArchConfig, ConvSpec};
use float_core::training::{Granularity, PruneConfig, SlimConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Float,
    FloatsI,
    FloatsC,
    FloatsSlim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub prune: Option<PruneSection>,
    #[serde(default)]
    pub slim: Option<SlimSection>,
    #[serde(default)]
    pub eval: EvalSection,
    pub paths: Paths,
    /// Fill the `wall_ms` metrics column; off keeps metrics byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

/// Plain conv stack: `conv(k×k) → BN → ReLU` per entry, then global pooling and a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { widths: vec![16, 32, 64, 128], strides: vec![1, 1, 2, 2], kernel: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::yes")]
    pub train_alpha: bool,
    pub attack: AttackSection,
}

/// Training-time PGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "defaults::yes")]
    pub random_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub density: f64,
    #[serde(default = "defaults::prune_rate")]
    pub initial_prune_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlimSection {
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub lambda_n: Vec<f64>,
    pub lambda_th: f64,
    /// Attack names: `fgsm` or `pgd<steps>`.
    pub attacks: Vec<String>,
    pub epsilon: f64,
    pub random_start: bool,
    pub seed: u64,
    pub batch_size: usize,
    /// Evaluate every this many epochs (0: only after the final epoch).
    pub every: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            lambda_n: vec![0.0, 0.2, 0.7, 1.0],
            lambda_th: 0.5,
            attacks: vec!["pgd7".into()],
            epsilon: 8.0 / 255.0,
            random_start: false,
            seed: 0,
            batch_size: 256,
            every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub out: PathBuf,
}

mod defaults {
    pub fn batch_size() -> usize {
        64
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        5e-4
    }
    pub fn yes() -> bool {
        true
    }
    pub fn prune_rate() -> f64 {
        0.3
    }
}

/// A named evaluation attack with its resolved parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedAttack {
    pub name: String,
    pub config: AttackConfig,
}

/// `fgsm` is a single full-budget step; `pgd<k>` takes `k` steps of `ε/4`.
pub fn parse_attack(name: &str, epsilon: f64, random_start: bool) -> Result<NamedAttack> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(LabError::Config(format!("attack epsilon must be non-negative, got {epsilon}")));
    }
    // a zero budget makes the step size irrelevant, but it must stay positive
    let full = if epsilon > 0.0 { epsilon } else { 1.0 };
    let base = AttackConfig { epsilon, steps: 1, step_size: full, random_start: false, clip_min: 0.0, clip_max: 1.0 };
    let config = match name {
        "fgsm" => base,
        _ => {
            let steps: usize = name
                .strip_prefix("pgd")
                .and_then(|s| s.parse().ok())
                .filter(|&k| k > 0)
                .ok_or_else(|| LabError::Config(format!("unknown attack {name:?}; expected fgsm or pgd<steps>")))?;
            AttackConfig { steps, step_size: full / 4.0, random_start, ..base }
        }
    };
    Ok(NamedAttack { name: name.to_string(), config })
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_id: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.run_id {
            self.run_id = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = &o.train {
            self.paths.train = v.clone();
        }
        if let Some(v) = &o.test {
            self.paths.test = v.clone();
        }
        if let Some(v) = &o.out {
            self.paths.out = v.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.run_id.is_empty() || self.run_id.contains([',', '\n', '"']) {
            return bad(format!("run_id {:?} must be non-empty and free of commas, quotes and newlines", self.run_id));
        }
        match (self.mode, &self.prune, &self.slim) {
            (Mode::Float, None, None) => {}
            (Mode::Float, _, _) => return bad("mode float takes neither prune nor slim settings".into()),
            (Mode::FloatsI | Mode::FloatsC, Some(_), None) => {}
            (Mode::FloatsI | Mode::FloatsC, _, _) => return bad(format!("mode {:?} needs prune settings and no slim settings", self.mode)),
            (Mode::FloatsSlim, _, Some(_)) => {}
            (Mode::FloatsSlim, _, None) => return bad("mode floats_slim needs slim settings".into()),
        }
        let m = &self.model;
        if m.widths.is_empty() || m.widths.len() != m.strides.len() || m.kernel == 0 {
            return bad("model needs equally many widths and strides and a positive kernel".into());
        }
        if m.widths.contains(&0) || m.strides.contains(&0) {
            return bad("model widths and strides must be positive".into());
        }
        if self.eval.lambda_n.is_empty() {
            return bad("eval.lambda_n must not be empty".into());
        }
        if let Some(v) = self.eval.lambda_n.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("lambda_n {v} outside [0, 1]"));
        }
        if self.eval.lambda_th != 0.0 && self.eval.lambda_th != 0.5 {
            return bad(format!("lambda_th must be 0 or 0.5, got {}", self.eval.lambda_th));
        }
        if self.eval.attacks.is_empty() {
            return bad("eval.attacks must not be empty".into());
        }
        if self.eval.batch_size == 0 {
            return bad("eval.batch_size must be positive".into());
        }
        self.eval_attacks()?;
        self.train_config().validate().map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn eval_attacks(&self) -> Result<Vec<NamedAttack>> {
        self.eval.attacks.iter().map(|a| parse_attack(a, self.eval.epsilon, self.eval.random_start)).collect()
    }

    pub fn slim_factors(&self) -> Vec<f64> {
        self.slim.as_ref().map_or_else(|| vec![1.0], |s| s.factors.clone())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let granularity = if self.mode == Mode::FloatsC { Granularity::Channel } else { Granularity::Irregular };
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            attack: AttackConfig {
                epsilon: t.attack.epsilon,
                steps: t.attack.steps,
                step_size: t.attack.step_size,
                random_start: t.attack.random_start,
                clip_min: 0.0,
                clip_max: 1.0,
            },
            optimizer: OptimizerConfig {
                learning_rate: t.learning_rate,
                momentum: t.momentum,
                weight_decay: t.weight_decay,
                total_epochs: t.epochs.max(1),
            },
            prune: self.prune.map(|p| PruneConfig { density: p.density, granularity, initial_prune_rate: p.initial_prune_rate }),
            slim: self.slim.as_ref().map(|s| SlimConfig { factors: s.factors.clone() }),
            seed: self.seed,
            train_alpha: t.train_alpha,
        }
    }

    /// Network geometry for images of `channels × height × width` with `classes` labels.
    pub fn arch(&self, channels: usize, height: usize, width: usize, classes: usize) -> ArchConfig {
        let k = self.model.kernel;
        ArchConfig {
            in_channels: channels,
            height,
            width,
            n_classes: classes,
            convs: self
                .model
                .widths
                .iter()
                .zip(&self.model.strides)
                .map(|(&out_channels, &stride)| ConvSpec { out_channels, kernel: k, stride, padding: k / 2 })
                .collect(),
        }
    }
}
