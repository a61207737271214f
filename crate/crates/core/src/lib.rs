//! Physically grounded data generation from a single demonstration.
//!
//! Starting from one demonstration, the pipeline re-anchors the demonstrated
//! end-effector motion to randomized object poses, then refines a Gaussian over
//! low-dimensional plan parameters by repeatedly sampling, simulating, scoring
//! successes against an expert tube, picking a diverse subset and refitting. Risky
//! states along the curated trajectories are relabeled with CEM-optimized
//! recovery chunks, and everything is exported as observation/action-chunk pairs.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curator;
pub mod dataset;
pub mod env;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod relabel;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};
