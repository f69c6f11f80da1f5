//! Grouped sparse projection of vector sets onto an average Hoyer-sparsity
//! target, with the pieces built on top of it: a weighted generalization,
//! a sparse NMF solver suite, and a small projected-training loop for dense
//! networks.
//!
//! The core operation takes nonzero vectors `x_1..x_r` and a level
//! `s in [0, 1]` and returns the closest vectors (same shapes, same signs)
//! whose *average* sparsity `(1/r) sum_i spar(x_i)` meets `s`, where
//! `spar` is the normalized l1/l2 ratio. One scalar dual variable controls
//! the whole group, so the per-vector sparsity levels distribute themselves.
//!
//! * [`sparsity`] — the measure, its weighted variant, soft thresholding.
//! * [`gsp`] — the grouped projection solver (safeguarded Newton).
//! * [`wgsp`] — the weighted grouped projection.
//! * [`nmf`] — Frobenius NMF with plain, sparse-projected, and l1 variants.
//! * [`training`] — feedforward nets with intermittent layer projection.
//! * [`data`] — synthetic instances, radial weight maps, CSV/JSON I/O.
//! * [`cli`] — the `sparseproj` command-line front end.

pub mod cli;
pub mod data;
pub mod gsp;
pub mod nmf;
pub mod sparsity;
pub mod training;
pub mod wgsp;

pub use gsp::{
    project_group, project_group_relative, project_single, ProjectionConfig, ProjectionResult,
};
pub use sparsity::{
    average_sparsity, soft_threshold, spar, spar_weighted, DenseVector, VectorGroup, WeightVector,
};
pub use wgsp::{project_group_weighted, WeightGroup};
