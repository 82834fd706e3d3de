//! Multi-channel differential transformer for EEG/EOG sleep staging.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: the tensor kernels and reverse-mode tape, the model itself,
//! the loss terms, signal preprocessing, metrics and the training step. File
//! formats, the synthetic data generator and the CLI live in the `sleepdiff`
//! crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod attention;
pub mod config;
pub mod data;
pub mod dsp;
pub mod embedding;
pub mod error;
pub mod forward;
pub mod gradcheck;
pub mod kernels;
pub mod losses;
pub mod mdta;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod sequence;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{Ablation, ModelConfig};
pub use error::{Error, Result};
pub use model::SleepDiffFormer;
pub use params::{ParamId, ParamStore};
pub use scalar::Real;
pub use tape::{Graph, Var};
pub use tensor::Tensor;
