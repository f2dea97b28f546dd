//! Sparse ternary compression of fine-tuning residuals.
//!
//! A task vector (fine-tuned minus base parameters) is sparsified to its
//! top-k% magnitudes per tensor, and the surviving entries are replaced by
//! their sign times one shared scale `alpha * std(task vector)`. The result
//! can be stored near its entropy with Rice-coded index gaps, or as a pair
//! of bitmasks that support popcount dot products and distances directly.
//!
//! Modules:
//! - [`tensor_store`]: the `TVC1` dense container and the [`TaskVector`] type.
//! - [`decompose`]: task-vector formation, sign/magnitude split, statistics.
//! - [`compress`]: top-k sparsification, scalar quantization, reconstruction.
//! - [`codec`]: the `CPT1` blob in Golomb-Rice or dual-bitmask layout.
//! - [`ternary_ops`]: bitwise kernels over dual bitmasks.
//! - [`merge`]: averaging, task arithmetic and TIES merging.
//! - [`compose`]: weighted low-rank composition and a bounded Nelder-Mead.
//! - [`sweep`]: (k, alpha) grid search.
//! - [`bench`]: transfer-time estimates and load timing.

pub mod bench;
mod bits;
pub mod codec;
pub mod compose;
pub mod compress;
pub mod decompose;
mod error;
pub mod merge;
pub mod nelder_mead;
pub mod sweep;
pub mod tensor_store;
pub mod ternary_ops;

pub use codec::{EncodedBlob, Format, GolombParams};
pub use compress::{CompressOptions, CompressedArtifact, SigmaMode, TernaryTensor};
pub use decompose::{SignMagnitude, VectorStats};
pub use error::{Error, Result};
pub use merge::{MergeMethod, MergeSpec};
pub use tensor_store::{DType, Group, TaskVector, TensorMeta};
pub use ternary_ops::BitmaskPair;
