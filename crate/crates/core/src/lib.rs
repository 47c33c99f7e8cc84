//! Numerical core for MoE-LoRA adapters whose experts write into disjoint,
//! Cayley-rotated singular subspaces of the frozen weight, together with the
//! two shared-basis baselines they are compared against.
//!
//! The crate is `no_std` (it needs `alloc`). Everything is double precision
//! and deterministic given explicit seeds; IO, file formats and the command
//! line live in the companion `ortho-hydra` crate.
//!
//! Shape conventions: a frozen weight is `d_out × d_in`, activations are row
//! vectors, and batched sequences are `batch × len × dim` in row-major order.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adapter;
pub mod cayley;
mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub(crate) mod math;
pub mod optim;
pub mod router;
pub mod seq;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use seq::SeqBatch;
