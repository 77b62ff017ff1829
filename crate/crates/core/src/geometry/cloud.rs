//! Foreground voxels as a point cloud with raw and normalized coordinates.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mask::{GridGeometry, VoxelMask};
use super::Point3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// World positions in millimeters.
    pub positions_raw: Vec<Point3>,
    /// Centroid-centered, isotropically scaled positions in `[-1, 1]^3`.
    pub positions_norm: Vec<Point3>,
    /// Foreground class per point (all `>= 1`).
    pub labels: Option<Vec<u8>>,
    /// Linear voxel index each point came from.
    pub source_index: Option<Vec<usize>>,
    /// Grid the source indices refer to.
    pub grid: Option<GridGeometry>,
}

impl PointCloud {
    /// Builds a cloud from raw positions, computing the normalized channel.
    pub fn from_positions(positions_raw: Vec<Point3>) -> Self {
        let positions_norm = normalize_positions(&positions_raw);
        Self {
            positions_raw,
            positions_norm,
            labels: None,
            source_index: None,
            grid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_raw.is_empty()
    }

    /// Six input channels per point: raw xyz followed by normalized xyz.
    pub fn features(&self) -> Vec<[f64; 6]> {
        self.positions_raw
            .iter()
            .zip(&self.positions_norm)
            .map(|(r, n)| [r[0], r[1], r[2], n[0], n[1], n[2]])
            .collect()
    }

    /// Recomputes the normalized channel from the raw positions.
    pub fn renormalize(&mut self) {
        self.positions_norm = normalize_positions(&self.positions_raw);
    }

    /// Sub-cloud at the given indices (repeats allowed). The normalized
    /// channel is carried over, not recomputed.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions_raw: indices.iter().map(|&i| self.positions_raw[i]).collect(),
            positions_norm: indices.iter().map(|&i| self.positions_norm[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            source_index: self
                .source_index
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            grid: self.grid,
        }
    }

    /// Diagnostic text dump: `count N` then one line per point with six
    /// coordinates and the label when present.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "count {}", self.len())?;
            for (i, (r, n)) in self.positions_raw.iter().zip(&self.positions_norm).enumerate() {
                write!(out, "{} {} {} {} {} {}", r[0], r[1], r[2], n[0], n[1], n[2])?;
                if let Some(labels) = &self.labels {
                    write!(out, " {}", labels[i])?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<PointCloud> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let count: usize = header
            .strip_prefix("count ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected `count N`"))?;
        let mut raw = Vec::with_capacity(count);
        let mut norm = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for (i, line) in lines.take(count) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 && fields.len() != 7 {
                return Err(Error::parse(path, i + 1, "expected 6 coordinates and an optional label"));
            }
            let mut v = [0.0; 6];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("cannot parse `{f}`")))?;
            }
            raw.push([v[0], v[1], v[2]]);
            norm.push([v[3], v[4], v[5]]);
            if let Some(l) = fields.get(6) {
                labels.push(
                    l.parse()
                        .map_err(|_| Error::parse(path, i + 1, format!("bad label `{l}`")))?,
                );
            }
        }
        if raw.len() != count {
            return Err(Error::parse(path, raw.len() + 2, "fewer points than declared"));
        }
        if !labels.is_empty() && labels.len() != count {
            return Err(Error::parse(path, 1, "labels present on only some points"));
        }
        Ok(PointCloud {
            positions_raw: raw,
            positions_norm: norm,
            labels: (!labels.is_empty()).then_some(labels),
            source_index: None,
            grid: None,
        })
    }
}

/// Centers positions on their centroid and divides by the largest absolute
/// centered coordinate over all axes, so every component lands in `[-1, 1]`.
/// A cloud with zero extent uses scale 1.
pub fn normalize_positions(positions: &[Point3]) -> Vec<Point3> {
    if positions.is_empty() {
        return Vec::new();
    }
    let n = positions.len() as f64;
    let mut centroid = [0.0; 3];
    for p in positions {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut scale = 0.0f64;
    for p in positions {
        for a in 0..3 {
            scale = scale.max((p[a] - centroid[a]).abs());
        }
    }
    if scale == 0.0 {
        scale = 1.0;
    }
    positions
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = ((p[a] - centroid[a]) / scale).clamp(-1.0, 1.0);
            }
            q
        })
        .collect()
}

/// One point per foreground voxel, in linear voxel order.
pub fn mask_to_points(mask: &VoxelMask) -> Result<PointCloud> {
    let g = &mask.geometry;
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    let mut source = Vec::new();
    for (i, &l) in mask.labels.iter().enumerate() {
        if l != 0 {
            raw.push(g.voxel_center(g.grid_index(i)));
            labels.push(l);
            source.push(i);
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut cloud = PointCloud::from_positions(raw);
    cloud.labels = Some(labels);
    cloud.source_index = Some(source);
    cloud.grid = Some(*g);
    Ok(cloud)
}

/// Writes point labels back to their source voxels; everything else is 0.
pub fn labels_to_mask(cloud: &PointCloud) -> Result<VoxelMask> {
    let labels = cloud.labels.as_ref().ok_or(Error::MissingProvenance("labels"))?;
    let source = cloud
        .source_index
        .as_ref()
        .ok_or(Error::MissingProvenance("source voxel indices"))?;
    let grid = cloud.grid.ok_or(Error::MissingProvenance("grid geometry"))?;
    let mut mask = VoxelMask::empty(grid);
    for (&i, &l) in source.iter().zip(labels) {
        if i >= mask.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "source index {i} outside grid of {} voxels",
                mask.labels.len()
            )));
        }
        mask.labels[i] = l;
    }
    Ok(mask)
}

/// Draws `count` point indices. With at least `count` points this is uniform
/// sampling without replacement; otherwise every point appears once and the
/// remainder is drawn with replacement. The returned order is shuffled.
pub fn sample_indices(available: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || available == 0 {
        return Err(Error::BadCount { count, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = if available >= count {
        rand::seq::index::sample(&mut rng, available, count).into_vec()
    } else {
        let mut all: Vec<usize> = (0..available).collect();
        all.extend((0..count - available).map(|_| rng.gen_range(0..available)));
        all
    };
    indices.shuffle(&mut rng);
    Ok(indices)
}

pub fn sample_points(cloud: &PointCloud, count: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    let indices = sample_indices(cloud.len(), count, seed)?;
    Ok((cloud.select(&indices), indices))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn unit_grid(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::new(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn single_voxel_has_zero_extent() {
        let mut mask = VoxelMask::empty(unit_grid([3, 3, 3]));
        mask.set([0, 0, 0], 1);
        let cloud = mask_to_points(&mask).unwrap();
        assert_eq!(cloud.positions_raw, vec![[0.0, 0.0, 0.0]]);
        assert_eq!(cloud.positions_norm, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn two_voxels_normalize_to_unit_ends() {
        let mut mask = VoxelMask::empty(unit_grid([3, 1, 1]));
        mask.set([0, 0, 0], 1);
        mask.set([2, 0, 0], 1);
        let cloud = mask_to_points(&mask).unwrap();
        assert_eq!(cloud.positions_norm, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn skewed_cloud_stays_in_unit_cube() {
        let mut pts: Vec<Point3> = (0..10).map(|_| [0.0, 0.0, 0.0]).collect();
        pts.push([10.0, 0.0, 0.0]);
        let norm = normalize_positions(&pts);
        assert!(norm.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(norm[10][0], 1.0);
    }

    #[test]
    fn raw_positions_use_spacing_and_origin() {
        let g = GridGeometry::new([4, 4, 4], [0.5, 0.25, 2.0], [10.0, -1.0, 3.0]).unwrap();
        let mut mask = VoxelMask::empty(g);
        mask.set([1, 2, 3], 4);
        let cloud = mask_to_points(&mask).unwrap();
        assert_eq!(cloud.positions_raw[0], [10.5, -0.5, 9.0]);
        assert_eq!(cloud.labels, Some(vec![4]));
        assert_eq!(cloud.source_index, Some(vec![g.linear_index([1, 2, 3])]));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mask = VoxelMask::empty(unit_grid([2, 2, 2]));
        assert!(matches!(mask_to_points(&mask), Err(Error::EmptyMask)));
    }

    #[test]
    fn sample_exhaustive_is_a_permutation() {
        let idx = sample_indices(5, 5, 1).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sample_pads_with_every_point() {
        let idx = sample_indices(3, 6, 9).unwrap();
        assert_eq!(idx.len(), 6);
        for i in 0..3 {
            assert!(idx.contains(&i));
        }
    }

    #[test]
    fn sample_large_is_distinct_and_deterministic() {
        let idx = sample_indices(20000, 12288, 42).unwrap();
        let set: HashSet<usize> = idx.iter().copied().collect();
        assert_eq!(set.len(), 12288);
        assert_eq!(idx, sample_indices(20000, 12288, 42).unwrap());
        assert_ne!(idx, sample_indices(20000, 12288, 43).unwrap());
    }

    #[test]
    fn missing_provenance_is_reported() {
        let mut cloud = PointCloud::from_positions(vec![[0.0; 3]]);
        assert!(matches!(labels_to_mask(&cloud), Err(Error::MissingProvenance(_))));
        cloud.labels = Some(vec![1]);
        assert!(matches!(labels_to_mask(&cloud), Err(Error::MissingProvenance(_))));
    }

    #[test]
    fn relabeled_cloud_keeps_support() {
        let mut mask = VoxelMask::empty(unit_grid([4, 4, 1]));
        for (i, ijk) in [[0, 0, 0], [1, 2, 0], [3, 3, 0]].into_iter().enumerate() {
            mask.set(ijk, i as u8 + 1);
        }
        let mut cloud = mask_to_points(&mask).unwrap();
        cloud.labels = Some(vec![7, 7, 7]);
        let back = labels_to_mask(&cloud).unwrap();
        for (a, b) in mask.labels.iter().zip(&back.labels) {
            assert_eq!(*a != 0, *b != 0);
            if *b != 0 {
                assert_eq!(*b, 7);
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.txt");
        let mut cloud = PointCloud::from_positions(vec![[0.1, 2.0, -3.5], [4.0, 5.25, 6.0]]);
        cloud.labels = Some(vec![3, 9]);
        cloud.write_dump(&path).unwrap();
        let back = PointCloud::read_dump(&path).unwrap();
        assert_eq!(back.positions_raw, cloud.positions_raw);
        assert_eq!(back.positions_norm, cloud.positions_norm);
        assert_eq!(back.labels, cloud.labels);
    }
}
