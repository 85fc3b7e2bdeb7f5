//! Unsupervised point-cloud part segmentation.
//!
//! The pipeline has three stages:
//!
//! 1. [`normals`] estimates per-point normals by neighborhood PCA over an
//!    exact KNN graph from [`spatial`].
//! 2. [`srg`] grows regions from random seeds across the KNN graph while
//!    neighbor distance and normal angle stay under threshold, then merges
//!    the result down to the requested part count.
//! 3. [`train`] self-trains the graph CNN in [`model`] (built on the small
//!    reverse-mode engine in [`nn`]) against the SRG clusters, replacing every
//!    point's target with the majority prediction inside its cluster.
//!
//! [`eval`] scores any labeling against ground truth with Hungarian-matched
//! mean IoU, and [`kmeans`] provides the clustering baseline.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled; file formats and the command-line front end live in the
//! companion `srgnet` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod config;
mod error;
pub mod eval;
pub mod fixtures;
pub mod kmeans;
mod math;
pub mod model;
pub mod nn;
pub mod normals;
pub mod sampling;
pub mod spatial;
pub mod srg;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{validate_cloud, LabelMap, NeighborGraph, Point3, PointCloud};
