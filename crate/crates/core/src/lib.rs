//! Efficient video action recognition by encoding fewer frames.
//!
//! The pipeline encodes only a strided subset of a clip's frames with a
//! frozen image encoder, restores the features of the skipped frames with a
//! small trainable attention stack conditioned on the flanking encoded
//! frames, and feeds the interleaved sequence to a lightweight recognition
//! head. Restoration replaces most of the per-frame encoder work with a few
//! thousand multiply-accumulates, which is where the efficiency comes from;
//! an analytic cost model accounts for it exactly.
//!
//! Modules, roughly bottom-up:
//!
//! - [`error`]: the crate-wide error type.
//! - [`rng`]: counter-based deterministic random streams.
//! - [`numerics`]: dense matrices, softmax/normalization kernels, and their
//!   backward passes.
//! - [`par`]: order-preserving parallel map with a sequential fallback
//!   (the `parallel` feature toggles the implementation, not the API).
//! - [`sampling`]: which frames are kept, which are restored, and how the
//!   two interleave back into one sequence.
//! - [`encoder`]: the frozen patch-attention image encoder.
//! - [`ffres`]: the trainable feature-restoration stack, its gradients, the
//!   restoration divergence, and the Adam optimizer.
//! - [`recognition`]: label embeddings and the matching / classification
//!   heads with full manual backward passes.
//! - [`labels`]: caption templates, caption manifests, and label-similarity
//!   reports.
//! - [`cost`]: the analytic multiply-accumulate cost model.
//! - [`datagen`]: the deterministic synthetic motion-video corpus and its
//!   file format.
//! - [`pipeline`]: end-to-end training, evaluation, checkpoints, and run
//!   reports.

pub mod cost;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod ffres;
pub mod labels;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod recognition;
pub mod rng;
pub mod sampling;

pub use error::{CoreError, Result};
pub use numerics::{FeatureVec, Matrix};
