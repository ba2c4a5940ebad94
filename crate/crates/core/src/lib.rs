//! Non-neural core of descriptor-based zero-shot 6D object pose estimation.
//!
//! The crate covers the data path around a distilled 3D local descriptor:
//!
//! - [`preprocess`]: sampling, statistical outlier removal and diameter normalization;
//! - [`descriptors`]: per-point descriptor backends (precomputed files, a rotation-invariant toy backend);
//! - [`correspondence`]: ground-truth correspondences between target and query and feature transfer;
//! - [`loss`]: the piecewise quadratic/linear distillation loss and its focal-weighted variant;
//! - [`registration`]: feature matching, triplet RANSAC and ICP refinement;
//! - [`metrics`]: RON / FMR feature metrics and pose errors (ADD, ADD-S, MSSD, recall);
//! - [`augment`]: seeded rotation, jitter and point dropout;
//! - [`store`]: the query-only binary feature cache and storage accounting;
//! - [`dataset`]: PLY I/O, scene bundles and the synthetic scene generator.
//!
//! All coordinates are `f64`. Every randomized operation takes an explicit seed.

pub mod augment;
pub mod correspondence;
pub mod dataset;
pub mod descriptors;
mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod preprocess;
pub mod registration;
pub mod store;

pub use error::{Error, Result};
pub use geometry::{PointCloud, RigidTransform, SpatialIndex};
