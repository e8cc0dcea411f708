//! Touchscreen stroke biometrics.
//!
//! Raw touch records are segmented into strokes, cut into fixed-length
//! windows and classified by a deep MLP. Window posteriors are fused per
//! stroke and across strokes, and the fused scores are evaluated as
//! identification accuracy and as verification FAR/FRR/EER.
//!
//! Hot loops (matrix kernels, per-stroke framing and scoring, DET sweeps)
//! run on rayon when the default `parallel` feature is on and sequentially
//! otherwise, with bit-identical results.

pub mod error;
pub mod framing;
pub mod fusion;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synthgen;

pub use error::{Error, Result};
