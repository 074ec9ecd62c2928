//! In-memory labelled image sets.

use alloc::vec::Vec;

use crate::error::dim_err;
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    /// Sample-major NCHW pixels.
    pub images: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        n_classes: usize,
        images: Vec<T>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let sample = channels * height * width;
        if sample == 0 || n_classes == 0 {
            return Err(dim_err!("dataset geometry {}x{}x{} with {} classes", channels, height, width, n_classes));
        }
        if images.len() != labels.len() * sample {
            return Err(dim_err!("{} pixels for {} samples of {}", images.len(), labels.len(), sample));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Range(alloc::format!("label {bad} >= {n_classes} classes")));
        }
        Ok(Self { channels, height, width, n_classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Stacks the selected samples into an NCHW batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let s = self.sample_len();
        let mut pixels = Vec::with_capacity(indices.len() * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(dim_err!("sample index {} out of {}", i, self.len()));
            }
            pixels.extend_from_slice(&self.images[i * s..(i + 1) * s]);
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(&[indices.len(), self.channels, self.height, self.width], pixels)?;
        Ok((t, labels))
    }

    /// Consecutive chunks of at most `chunk` samples, in stored order.
    pub fn chunks(&self, chunk: usize) -> impl Iterator<Item = Result<(Tensor<T>, Vec<usize>)>> + '_ {
        let n = self.len();
        let chunk = chunk.max(1);
        (0..n).step_by(chunk).map(move |start| {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            self.gather(&idx)
        })
    }
}
