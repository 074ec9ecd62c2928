//! Weight-conditioned once-for-all adversarial training.
//!
//! A single network is trained on clean inputs through its plain weights and
//! on adversarial inputs through noise-perturbed weights, each path with its
//! own batch-norm statistics. At inference a continuous knob rescales the
//! learned noise to move along the accuracy/robustness trade-off without
//! retraining or switching models.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded;
//! file formats, configs and the CLI live in the `float-lab` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attacks;
pub mod autodiff;
pub mod conditioning;
pub mod costmodel;
pub mod data;
mod error;
pub mod model;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
