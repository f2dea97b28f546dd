use std::io;

use thiserror::Error;

/// Errors produced by every module of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),

    #[error("container manifest corrupt: {0}")]
    ManifestCorrupt(String),
    #[error("container payload truncated: need {needed} bytes, have {available}")]
    PayloadTruncated { needed: u64, available: u64 },
    #[error("unsupported dtype tag {0}")]
    DtypeUnsupported(u8),
    #[error("non-finite value in group `{group}` at element {index}")]
    NonFinite { group: String, index: usize },
    #[error("value {value} in group `{group}` does not fit dtype {dtype}")]
    DtypeOverflow {
        group: String,
        value: f32,
        dtype: &'static str,
    },

    #[error("invalid task vector: {0}")]
    InvalidTaskVector(String),
    #[error("group name mismatch: `{left}` vs `{right}`")]
    NameMismatch { left: String, right: String },
    #[error("shape mismatch in `{name}`: {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("statistics of an empty vector are undefined")]
    EmptyVector,

    #[error("density must lie in (0, 100] percent, got {0}")]
    InvalidDensity(f64),
    #[error("alpha must be finite and positive, got {0}")]
    InvalidAlpha(f64),
    #[error("scale of group `{group}` is not finite (alpha {alpha}, sigma {sigma})")]
    NonFiniteScale { group: String, alpha: f64, sigma: f64 },
    #[error("invalid ternary tensor: {0}")]
    InvalidTernary(String),

    #[error("argument outside the function domain: {0}")]
    DomainError(String),
    #[error("blob header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("corrupt bitstream: {0}")]
    BitstreamCorrupt(String),
    #[error("bitmask overlap at index {0}")]
    MaskOverlap(u64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("at least one input is required")]
    EmptyList,
    #[error("invalid merge parameters: {0}")]
    InvalidMerge(String),

    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("invalid low-rank module: {0}")]
    InvalidModule(String),
    #[error("invalid optimizer setting: {0}")]
    InvalidOptimizer(String),
    #[error("loss evaluation returned a non-finite value ({0})")]
    LossNonFinite(f64),

    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("invalid benchmark setting: {0}")]
    InvalidBench(String),
}

pub type Result<T> = std::result::Result<T, Error>;
