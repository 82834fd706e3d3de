use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("sampling rate {fs} Hz must exceed twice the {high} Hz cutoff")]
    SampleRateTooLow { fs: f64, high: f64 },
    #[error("cannot resample {from} Hz to {to} Hz with a small rational ratio")]
    UnsupportedRatio { from: f64, to: f64 },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("evaluation set is empty")]
    EmptyTarget,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not enough domains in batch: {0}")]
    Batch(String),
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
