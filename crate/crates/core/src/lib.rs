//! Task arithmetic for small closed-vocabulary classifiers.
//!
//! The crate trains desk-scale encoders under several pre-training
//! objectives, fine-tunes them per task with either aligned (probe, then
//! encoder) or full fine-tuning, and then works in weight space: task
//! vectors, scaled task addition with a coefficient line search, and the
//! pairwise weight-disentanglement error.
//!
//! The guide under `book/` walks through each concept; its Rust snippets
//! are compiled and run as doc-tests of this crate.

pub mod arith;
pub mod checkpoint;
pub mod disentangle;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod nn;
pub mod rng;
pub mod taskgen;
pub mod train;
pub mod tensor;

pub use checkpoint::{load_tvf, save_tvf, snapshot_hash, SnapshotHash, WeightSnapshot};
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/task-vectors.md")]
    mod task_vectors {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/normalized-accuracy.md")]
    mod normalized_accuracy {}
    #[doc = include_str!("../../../book/src/disentanglement.md")]
    mod disentanglement {}
    #[doc = include_str!("../../../book/src/regimes.md")]
    mod regimes {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cookbook.md")]
    mod cookbook {}
}
