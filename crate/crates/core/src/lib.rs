//! Learned rigid registration of 3D point clouds.
//!
//! The pipeline encodes each cloud with an EdgeConv graph descriptor, refines
//! the features with self-attention (biased by embeddings of surface-normal
//! angles) and cross-attention, turns feature inner products into soft
//! correspondences with a slack-augmented Sinkhorn normalization, and finally
//! estimates the rigid transform with RANSAC over the strongest matches.

pub mod attention;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod model;
pub mod descriptor;
pub mod normals;
pub mod params;
pub mod pipeline;
pub mod pose;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
