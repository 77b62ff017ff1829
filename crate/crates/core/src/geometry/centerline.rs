//! Centerline polylines, tubular dilation, and the overlap-rate branch
//! labeling rule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mask::{GridGeometry, VoxelMask};
use super::{dist2, Point3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CenterlinePolyline {
    pub branch_id: String,
    /// Ordered vertices in millimeters.
    pub vertices: Vec<Point3>,
    /// Ground-truth class, when known.
    pub label: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct CenterlineRecord {
    branch_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    vertices: Vec<f64>,
}

impl CenterlinePolyline {
    pub fn new(branch_id: impl Into<String>, vertices: Vec<Point3>, label: Option<u8>) -> Result<Self> {
        let branch_id = branch_id.into();
        if vertices.is_empty() {
            return Err(Error::ConfigInvalid(format!("branch `{branch_id}` has no vertices")));
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ConfigInvalid(format!(
                "branch `{branch_id}` repeats a vertex consecutively"
            )));
        }
        Ok(Self {
            branch_id,
            vertices,
            label,
        })
    }

    /// Total polyline length in millimeters.
    pub fn length(&self) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| dist2(&w[0], &w[1]).sqrt())
            .sum()
    }

    /// Squared distance from `p` to the nearest point on the polyline.
    pub fn distance2(&self, p: &Point3) -> f64 {
        if self.vertices.len() == 1 {
            return dist2(p, &self.vertices[0]);
        }
        self.vertices
            .windows(2)
            .map(|w| segment_distance2(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Squared distance from `p` to segment `ab`.
pub fn segment_distance2(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    if len2 == 0.0 {
        return dist2(p, a);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0);
    let closest = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist2(p, &closest)
}

pub fn read_centerlines(path: &Path) -> Result<Vec<CenterlinePolyline>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<CenterlineRecord> = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, e.line(), e.to_string())
    })?;
    records
        .into_iter()
        .map(|r| {
            if r.vertices.len() % 3 != 0 {
                return Err(Error::parse(
                    path,
                    0,
                    format!("branch `{}`: vertex list length not a multiple of 3", r.branch_id),
                ));
            }
            let vertices = r.vertices.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            CenterlinePolyline::new(r.branch_id, vertices, r.label)
                .map_err(|e| Error::parse(path, 0, e.to_string()))
        })
        .collect()
}

pub fn write_centerlines(path: &Path, branches: &[CenterlinePolyline]) -> Result<()> {
    let records: Vec<CenterlineRecord> = branches
        .iter()
        .map(|b| CenterlineRecord {
            branch_id: b.branch_id.clone(),
            label: b.label,
            vertices: b.vertices.iter().flatten().copied().collect(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&records).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Linear indices (sorted, unique) of voxels whose centers lie within
/// `radius` mm of the polyline. Distances are compared squared, so voxels
/// exactly at the radius are included.
pub fn dilate_centerline(polyline: &CenterlinePolyline, radius: f64, grid: &GridGeometry) -> Vec<usize> {
    let r2 = radius * radius;
    let mut out = Vec::new();
    let verts = &polyline.vertices;
    let segments: Vec<(Point3, Point3)> = if verts.len() == 1 {
        vec![(verts[0], verts[0])]
    } else {
        verts.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in &segments {
        let mut ranges = [(0usize, 0usize); 3];
        let mut empty = false;
        for axis in 0..3 {
            let lo = a[axis].min(b[axis]) - radius;
            let hi = a[axis].max(b[axis]) + radius;
            match grid.index_range(axis, lo, hi) {
                Some(r) => ranges[axis] = r,
                None => empty = true,
            }
        }
        if empty {
            continue;
        }
        for z in ranges[2].0..=ranges[2].1 {
            for y in ranges[1].0..=ranges[1].1 {
                for x in ranges[0].0..=ranges[0].1 {
                    let c = grid.voxel_center([x, y, z]);
                    if segment_distance2(&c, a, b) <= r2 {
                        out.push(grid.linear_index([x, y, z]));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Fraction of the dilated voxels carrying `class` in `mask`.
pub fn overlap_rate(dilated: &[usize], mask: &VoxelMask, class: u8) -> Result<f64> {
    if dilated.is_empty() {
        return Err(Error::EmptyBranch(String::new()));
    }
    let hits = dilated.iter().filter(|&&i| mask.labels[i] == class).count();
    Ok(hits as f64 / dilated.len() as f64)
}

/// Branch-level result of the overlap-rate rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchLabel {
    pub branch_id: String,
    /// Winning class, or `None` when the branch overlaps no class at all.
    pub class: Option<u8>,
    pub overlap_rate: f64,
    /// Overlap rate for class `c` at position `c - 1`.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchLabeling {
    pub branches: Vec<BranchLabel>,
}

impl BranchLabeling {
    pub fn unassigned_count(&self) -> usize {
        self.branches.iter().filter(|b| b.class.is_none()).count()
    }
}

/// Labels each branch with the class of highest overlap rate between its
/// dilated centerline and `predicted`. Classes `1..=max label` are scored;
/// ties go to the lower class, and a branch with no overlap is unassigned.
pub fn label_centerlines(
    branches: &[CenterlinePolyline],
    predicted: &VoxelMask,
    radius: f64,
) -> Result<BranchLabeling> {
    label_centerlines_with_classes(branches, predicted, radius, predicted.max_label())
}

/// As [`label_centerlines`], scoring a fixed number of classes.
pub fn label_centerlines_with_classes(
    branches: &[CenterlinePolyline],
    predicted: &VoxelMask,
    radius: f64,
    num_classes: u8,
) -> Result<BranchLabeling> {
    if !(radius > 0.0) {
        return Err(Error::ConfigInvalid(format!("dilation radius must be positive, got {radius}")));
    }
    let mut out = Vec::with_capacity(branches.len());
    for branch in branches {
        let dilated = dilate_centerline(branch, radius, &predicted.geometry);
        if dilated.is_empty() {
            return Err(Error::EmptyBranch(branch.branch_id.clone()));
        }
        let mut counts = vec![0usize; num_classes as usize + 1];
        for &i in &dilated {
            let l = predicted.labels[i] as usize;
            if l < counts.len() {
                counts[l] += 1;
            }
        }
        let total = dilated.len() as f64;
        let rates: Vec<f64> = counts[1..].iter().map(|&c| c as f64 / total).collect();
        let mut class = None;
        let mut best = 0.0;
        for (c, &r) in rates.iter().enumerate() {
            if r > best {
                best = r;
                class = Some(c as u8 + 1);
            }
        }
        out.push(BranchLabel {
            branch_id: branch.branch_id.clone(),
            class,
            overlap_rate: best,
            rates,
        });
    }
    Ok(BranchLabeling { branches: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> GridGeometry {
        GridGeometry::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn line(id: &str, verts: Vec<Point3>) -> CenterlinePolyline {
        CenterlinePolyline::new(id, verts, None).unwrap()
    }

    #[test]
    fn point_dilation_hits_face_neighbors() {
        let g = unit_grid(5);
        let set = dilate_centerline(&line("p", vec![[2.0, 2.0, 2.0]]), 1.0, &g);
        let mut expected: Vec<usize> = [
            [2, 2, 2],
            [1, 2, 2],
            [3, 2, 2],
            [2, 1, 2],
            [2, 3, 2],
            [2, 2, 1],
            [2, 2, 3],
        ]
        .iter()
        .map(|&ijk| g.linear_index(ijk))
        .collect();
        expected.sort_unstable();
        assert_eq!(set, expected);
    }

    #[test]
    fn thin_line_hits_only_its_voxels() {
        let g = unit_grid(6);
        let set = dilate_centerline(&line("x", vec![[1.0, 2.0, 3.0], [4.0, 2.0, 3.0]]), 0.49, &g);
        let expected: Vec<usize> = (1..=4).map(|x| g.linear_index([x, 2, 3])).collect();
        assert_eq!(set, expected);
    }

    #[test]
    fn line_between_centers_misses_everything() {
        let g = unit_grid(6);
        let set = dilate_centerline(&line("x", vec![[0.0, 2.5, 2.5], [5.0, 2.5, 2.5]]), 0.4, &g);
        assert!(set.is_empty());
    }

    #[test]
    fn overlap_counts() {
        let g = GridGeometry::new([10, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mut mask = VoxelMask::empty(g);
        for x in 0..10 {
            mask.set([x, 0, 0], if x < 6 { 1 } else { 2 });
        }
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(overlap_rate(&all, &mask, 1).unwrap(), 0.6);
        assert_eq!(overlap_rate(&all, &mask, 2).unwrap(), 0.4);
        assert_eq!(overlap_rate(&all, &mask, 3).unwrap(), 0.0);
        assert!(matches!(overlap_rate(&[], &mask, 1), Err(Error::EmptyBranch(_))));

        let branch = line("b", vec![[0.0, 0.0, 0.0], [9.0, 0.0, 0.0]]);
        let labeling = label_centerlines(&[branch], &mask, 0.5).unwrap();
        let b = &labeling.branches[0];
        assert_eq!(b.class, Some(1));
        assert_eq!(b.rates, vec![0.6, 0.4]);
        assert_eq!(b.overlap_rate, 0.6);
    }

    #[test]
    fn full_overlap_and_background() {
        let g = unit_grid(8);
        let mut mask = VoxelMask::empty(g);
        for x in 0..8 {
            for dy in 0..3 {
                mask.set([x, 2 + dy, 3], 3);
            }
        }
        let inside = line("in", vec![[0.0, 3.0, 3.0], [7.0, 3.0, 3.0]]);
        let outside = line("out", vec![[0.0, 6.0, 6.0], [7.0, 6.0, 6.0]]);
        let labeling = label_centerlines(&[inside, outside], &mask, 0.5).unwrap();
        assert_eq!(labeling.branches[0].class, Some(3));
        assert_eq!(labeling.branches[0].overlap_rate, 1.0);
        assert_eq!(labeling.branches[1].class, None);
        assert_eq!(labeling.unassigned_count(), 1);
    }

    #[test]
    fn ties_go_to_lower_class() {
        let g = GridGeometry::new([4, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mask = VoxelMask::new(g, vec![2, 2, 1, 1]).unwrap();
        let b = line("t", vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(label_centerlines(&[b], &mask, 0.1).unwrap().branches[0].class, Some(1));
    }

    #[test]
    fn branch_outside_grid_is_empty_branch() {
        let g = unit_grid(3);
        let mask = VoxelMask::empty(g);
        let b = line("far", vec![[50.0, 50.0, 50.0]]);
        assert!(matches!(label_centerlines(&[b], &mask, 1.0), Err(Error::EmptyBranch(id)) if id == "far"));
    }

    #[test]
    fn centerline_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let branches = vec![
            CenterlinePolyline::new("LAD", vec![[0.5, 1.0, 2.0], [3.0, 4.0, 5.125]], Some(2)).unwrap(),
            CenterlinePolyline::new("x", vec![[1.0, 1.0, 1.0]], None).unwrap(),
        ];
        write_centerlines(&path, &branches).unwrap();
        assert_eq!(read_centerlines(&path).unwrap(), branches);
    }

    #[test]
    fn repeated_vertex_is_rejected() {
        assert!(CenterlinePolyline::new("r", vec![[0.0; 3], [0.0; 3]], None).is_err());
    }
}
