//! File formats, synthetic data, experiments and the command line for the
//! sleep staging model in `sleepdiff-core`.

pub mod checkpoint;
pub mod container;
pub mod format;
pub mod synth;
pub mod experiment;
pub mod export;
pub mod gradsuite;
