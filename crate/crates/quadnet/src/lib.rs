//! Embedding learning with hierarchical labels and quadruplet losses.
//!
//! A quadruplet ties together four samples: a reference `R`, a positive
//! `P+` from the same fine class, a semi-positive `P-` from the same
//! coarse class but a different fine class, and a negative `N` from a
//! different coarse class. Training pushes the embedding towards the
//! ordering `D(R,P+) < D(R,P-) < D(R,N)` while two softmax heads keep the
//! coarse and fine classes discriminable.
//!
//! The crate provides:
//!
//! - [`core`]: domain types, the label hierarchy, and l2 distance geometry;
//! - [`losses`]: contrastive, triplet, classification, joint, global and
//!   combined losses with analytic gradients;
//! - [`mining`]: hardest-negative selection and two informed positive
//!   selection methods, plus a random baseline;
//! - [`encoder`]: a small fully connected encoder with one embedding head
//!   and two classification heads, trained by manual backpropagation with
//!   SGD + momentum;
//! - [`data`]: synthetic hierarchical datasets, zero-shot splits, and
//!   line-oriented dataset/embedding files;
//! - [`eval`]: Recall@K, seeded k-means, and normalized mutual information.
//!
//! All operations are deterministic given their seeds, and everything is
//! plain `f64` on the CPU.

pub mod core;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mining;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use crate::core::{
    l2_distance, pairwise_distances, DistanceMatrix, EmbeddingSet, HyperParams, LabelHierarchy,
    LabeledSample, QuadrupletIdx,
};
pub use crate::error::{Error, Result};
