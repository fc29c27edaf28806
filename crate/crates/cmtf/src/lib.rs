//! Coupled matrix-tensor factorization (CMTF).
//!
//! A three-mode tensor and up to three side matrices, coupled along its
//! modes, are jointly decomposed into shared low-rank factors. The crate
//! provides:
//!
//! - the alternating-least-squares baseline solver ([`als::cmtf_als`]),
//!   accelerated by a Gram-matrix identity for stacked Khatri-Rao systems,
//! - a density-biased sampling pipeline ([`driver::turbo_cmtf`]) that fits
//!   many small subproblems, optionally in parallel, and merges the partial
//!   factors into sparse full-size ones,
//! - a weighted solver tolerant to missing entries ([`missing::cmtf_wals`]),
//! - evaluation metrics and a prediction-by-projection task ([`eval`]),
//! - plain-text tensor/matrix file formats and factor output ([`io`]),
//! - a seeded synthetic-instance generator ([`synth`]).
//!
//! All solvers are deterministic given their seed.

pub mod als;
pub mod driver;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod merge;
pub mod missing;
pub mod sampler;
pub mod synth;
pub mod tensor;

pub(crate) mod seeds;

pub use error::{Error, Result};
