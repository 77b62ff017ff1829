//! Spreads labels from sampled points to the whole cloud.

use super::knn::nearest;
use super::Point3;
use crate::error::{Error, Result};

/// Each target point takes the label of its nearest sampled point (raw mm
/// coordinates, ties to the lower sample index).
pub fn propagate_labels(
    sampled_positions: &[Point3],
    sampled_labels: &[u8],
    targets: &[Point3],
) -> Result<Vec<u8>> {
    if sampled_positions.is_empty() {
        return Err(Error::BadCount {
            count: 0,
            available: 0,
        });
    }
    if sampled_positions.len() != sampled_labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sampled positions but {} labels",
            sampled_positions.len(),
            sampled_labels.len()
        )));
    }
    Ok(nearest(targets, sampled_positions)?
        .into_iter()
        .map(|j| sampled_labels[j])
        .collect())
}
