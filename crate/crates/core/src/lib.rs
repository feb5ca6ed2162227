//! Unsupervised entity alignment between two knowledge graphs.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`features`]: per-entity name embeddings plus random-walk context
//!    embeddings, concatenated into multi-view input features.
//! 2. [`reconstruct`]: mutual-best name pseudo-labels drive relation
//!    matching, and each graph keeps only triples whose relation matched.
//! 3. [`lcat`]: a single learnable convolution/attention layer that
//!    interpolates between uniform (GCN-style) and learned (GAT-style)
//!    neighbor weights.
//! 4. [`train`]: two edge-dropped views, an online and an EMA encoder,
//!    InfoNCE loss and Adam.
//! 5. [`align`]: consistency-adjusted similarity, rankings, Hits@k and MRR.
//!
//! [`pipeline`] wires the stages together and hosts the synthetic benchmark
//! generator.

pub mod align;
pub mod error;
pub mod features;
pub mod kg;
pub mod lcat;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
