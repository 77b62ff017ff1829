//! Coronary artery branch labeling from a voxel segmentation with a point
//! transformer.
//!
//! The pipeline turns a labeled or binary voxel mask into a point cloud,
//! classifies every point with a vector-attention encoder–decoder, spreads
//! the predictions back onto all foreground voxels, and finally names each
//! centerline branch by the class that covers most of its dilated tube.

pub mod error;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
