//! Redundancy-lifecycle toolkit for multimodal decoders.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`linalg`]: dense row-major matrices, a cyclic Jacobi eigensolver, row softmax
//!   and row normalization.
//! - [`entropy`]: Gram matrices, elbow detection and truncated matrix entropy
//!   probes over layerwise hidden states ([`trace::LayerTrace`]).
//! - [`lifecycle`]: three-stage boundary detection, the KL saturation probe and
//!   marginal utility.
//! - [`anchorcover`]: the relevance-anchor plus farthest-point-cover visual token
//!   pruner and its exhaustive reference solver.
//! - [`ssr`]: saturation-stage handlers (visual update freezing and extreme
//!   token sparsity) and the end-to-end pipeline planner.
//! - [`decoder`]: a seeded toy multimodal decoder with FLOP instrumentation.
//! - [`flops`]: the closed-form staged FLOPs model.
//!
//! File formats, reports and the command-line front end live in the `halfv`
//! companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod anchorcover;
pub mod decoder;
pub mod entropy;
pub mod error;
pub mod flops;
pub mod lifecycle;
pub mod linalg;
pub mod profile;
pub mod rng;
pub mod rope;
pub mod ssr;
pub mod trace;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, EigenDecomposition};
pub use profile::{ArchProfile, Retention, SsrMode};
pub use trace::{LayerTrace, Modality, TokenGroup};

/// Round-half-up of a non-negative real to an integer count.
pub(crate) fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}
