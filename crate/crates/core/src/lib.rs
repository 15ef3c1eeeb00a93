//! Weakly supervised point cloud segmentation under sparse, unevenly
//! distributed annotations.
//!
//! The crate is organised bottom-up:
//! - [`data`]: point clouds, synthetic desk-scale scenes, file formats;
//! - [`voxel`]: disjoint voxel partitions;
//! - [`annotate`]: uniform, clustered and density-biased annotation simulators;
//! - [`lads`]: label-aware downsampling and its ablations;
//! - [`nn`]: a small classifier with exact gradients, losses and entropy;
//! - [`gradlab`]: Monte Carlo checks of sampled-gradient bias and variance;
//! - [`train`]: the asynchronous entropy-calibrated training loop and metrics;
//! - [`experiment`]: the seeded ablation harness used by the CLI and tests.

pub mod annotate;
pub mod data;
pub mod error;
pub mod experiment;
pub mod knn;
pub mod lads;
pub mod nn;
pub mod gradlab;
pub mod seed;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
