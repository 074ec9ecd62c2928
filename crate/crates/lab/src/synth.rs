//! Seeded synthetic image sets with a robust and a fragile class cue.
//!
//! Every image is a flat background plus Gaussian noise, a bright blob in a
//! class-specific cell (placed at the label's cell with probability `agree`,
//! otherwise at another class's cell), and a faint per-class ±1 texture. The
//! texture alone identifies the class but is smaller than typical attack
//! budgets; the blob survives perturbation but is sometimes misleading.

use float_core::data::Dataset;
use float_core::rng::Stream;

use crate::error::{DataErrorKind, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Seeds the per-sample draws.
    pub seed: u64,
    /// Seeds the class textures; train and test sets must share it.
    pub pattern_seed: u64,
    pub background: f64,
    pub noise_std: f64,
    pub blob_amplitude: f64,
    pub agree: f64,
    pub texture_amplitude: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 1000,
            channels: 1,
            height: 8,
            width: 8,
            seed: 7,
            pattern_seed: 0,
            background: 0.3,
            noise_std: 0.15,
            blob_amplitude: 0.5,
            agree: 0.85,
            texture_amplitude: 0.08,
        }
    }
}

const PATTERN_STREAM: u64 = 100;
const SAMPLE_STREAM: u64 = 101;

impl SynthSpec {
    fn grid(&self) -> usize {
        (1..).find(|g| g * g >= self.classes).expect("finite")
    }

    fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(LabError::data(DataErrorKind::Empty, "zero samples per class"));
        }
        if self.classes < 2 || self.classes > 256 {
            return Err(LabError::Config(format!("classes must lie in [2, 256], got {}", self.classes)));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(LabError::Config("image dimensions must be positive".into()));
        }
        let g = self.grid();
        if self.height < g || self.width < g {
            return Err(LabError::Config(format!("{}x{} image cannot hold {} class cells", self.height, self.width, self.classes)));
        }
        if !(0.0..=1.0).contains(&self.agree) {
            return Err(LabError::Config(format!("agree must lie in [0, 1], got {}", self.agree)));
        }
        let finite = [self.background, self.noise_std, self.blob_amplitude, self.texture_amplitude];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::Config("synthetic amplitudes must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `(row range, column range)` of class `c`'s blob cell.
    fn cell(&self, c: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let g = self.grid();
        let (ch, cw) = (self.height / g, self.width / g);
        let (r, k) = (c / g, c % g);
        (r * ch..(r + 1) * ch, k * cw..(k + 1) * cw)
    }
}

/// Samples are ordered `label = i mod classes`; identical specs give identical bytes.
pub fn make_synthetic(spec: &SynthSpec) -> Result<Dataset<f32>> {
    spec.validate()?;
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let plane = c * h * w;
    let mut patterns = Stream::new(spec.pattern_seed, PATTERN_STREAM);
    let textures: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..plane).map(|_| if patterns.below(2) == 0 { -1.0 } else { 1.0 }).collect())
        .collect();
    let mut rng = Stream::new(spec.seed, SAMPLE_STREAM);
    let n = spec.classes * spec.per_class;
    let mut images = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        let blob = if rng.uniform(0.0, 1.0) < spec.agree {
            label
        } else {
            let other = rng.below(spec.classes - 1);
            if other >= label { other + 1 } else { other }
        };
        let (rows, cols) = spec.cell(blob);
        for ch in 0..c {
            for r in 0..h {
                for k in 0..w {
                    let idx = (ch * h + r) * w + k;
                    let mut v = spec.background + spec.noise_std * rng.standard_normal();
                    v += spec.texture_amplitude * textures[label][idx];
                    if rows.contains(&r) && cols.contains(&k) {
                        v += spec.blob_amplitude;
                    }
                    images.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(c, h, w, spec.classes, images, labels).map_err(|e| LabError::Config(e.to_string()))
}
