//! Error type shared by all core modules.

use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("split fractions must be non-negative and sum to 1 (got {0}, {1}, {2})")]
    InvalidFractions(f64, f64, f64),

    #[error("manifest needs at least {needed} records, found {found}")]
    TooFewRecords { needed: usize, found: usize },

    #[error("duplicate case id `{0}` in manifest")]
    DuplicateCaseId(String),

    #[error("phantom count must be at least 4 to represent all classes (got {0})")]
    PhantomCountTooSmall(usize),

    #[error("phantom size must be at least 32 pixels (got {0})")]
    PhantomSizeTooSmall(usize),

    #[error("class mix must be non-negative and sum to 1")]
    InvalidClassMix,

    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(&'static str),

    #[error("mask shape ({mask_h}x{mask_w}) does not match image shape ({img_h}x{img_w})")]
    IncongruentMask {
        img_h: usize,
        img_w: usize,
        mask_h: usize,
        mask_w: usize,
    },

    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),

    #[error("backbone `{0}` requires pretrained weights; none were supplied")]
    BackboneWeightsUnavailable(&'static str),

    #[error("the pretrained backbone is inference-only and cannot be unfrozen")]
    BackboneNotTrainable,

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("input {side} ({value}) is not divisible by 2^depth ({divisor})")]
    ResolutionNotDivisible {
        side: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("threshold must lie strictly inside (0, 1), got {0}")]
    InvalidThreshold(f64),

    #[error("loss weights must not both be zero")]
    ZeroLossWeights,

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),

    #[error("non-finite {what} encountered at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("{0}")]
    Other(String),
}
