//! Deterministic geometry: mask and cloud conversion, sampling,
//! neighborhoods, and centerline labeling.

pub mod centerline;
pub mod cloud;
pub mod fps;
pub mod knn;
pub mod mask;
pub mod propagate;

pub use centerline::{
    dilate_centerline, label_centerlines, label_centerlines_with_classes, overlap_rate,
    read_centerlines, write_centerlines, BranchLabel, BranchLabeling, CenterlinePolyline,
};
pub use cloud::{labels_to_mask, mask_to_points, normalize_positions, sample_indices, sample_points, PointCloud};
pub use fps::farthest_point_sampling;
pub use knn::{knn, nearest};
pub use mask::{GridGeometry, VoxelMask};
pub use propagate::propagate_labels;

/// A position in millimeters (or normalized units).
pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
