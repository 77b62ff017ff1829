//! Labeled voxel grids and the `vmask` file format.
//!
//! A `vmask` file is a short text header followed by raw voxel bytes:
//!
//! ```text
//! dims 128 128 128
//! spacing 0.35 0.35 0.6
//! origin 0 0 0
//! dtype u8
//!
//! <dims[0]*dims[1]*dims[2] bytes, x fastest>
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{Error, Result};

/// Dimensions and physical placement of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    /// Millimeters per voxel along each axis.
    pub spacing: [f64; 3],
    /// World position (mm) of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::ConfigInvalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "grid spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::ConfigInvalid(format!("grid origin must be finite, got {origin:?}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    #[inline]
    pub fn grid_index(&self, linear: usize) -> [usize; 3] {
        let x = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position of a voxel center.
    #[inline]
    pub fn voxel_center(&self, ijk: [usize; 3]) -> Point3 {
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    /// Inclusive index range of voxel centers whose coordinate along `axis`
    /// lies in `[lo, hi]` (mm), clipped to the grid. `None` when empty.
    pub fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let to_index = |v: f64| (v - self.origin[axis]) / self.spacing[axis];
        let first = to_index(lo).ceil().max(0.0);
        let last = to_index(hi).floor().min(self.dims[axis] as f64 - 1.0);
        if first > last {
            None
        } else {
            Some((first as usize, last as usize))
        }
    }
}

/// A dense voxel grid of class labels. Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub geometry: GridGeometry,
    pub labels: Vec<u8>,
}

impl VoxelMask {
    pub fn new(geometry: GridGeometry, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != geometry.voxel_count() {
            return Err(Error::ShapeMismatch(format!(
                "mask with dims {:?} needs {} labels, got {}",
                geometry.dims,
                geometry.voxel_count(),
                labels.len()
            )));
        }
        Ok(Self { geometry, labels })
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        Self {
            labels: vec![0; geometry.voxel_count()],
            geometry,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn get(&self, ijk: [usize; 3]) -> u8 {
        self.labels[self.geometry.linear_index(ijk)]
    }

    pub fn set(&mut self, ijk: [usize; 3], label: u8) {
        let i = self.geometry.linear_index(ijk);
        self.labels[i] = label;
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Voxel count per label value, indexed by label (entry 0 is background).
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.max_label() as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn to_vmask_bytes(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = format!(
            "dims {} {} {}\nspacing {} {} {}\norigin {} {} {}\ndtype u8\n\n",
            g.dims[0],
            g.dims[1],
            g.dims[2],
            g.spacing[0],
            g.spacing[1],
            g.spacing[2],
            g.origin[0],
            g.origin[1],
            g.origin[2]
        )
        .into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_vmask_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut dims = None;
        let mut spacing = None;
        let mut origin = None;
        let mut dtype_seen = false;
        let mut pos = 0usize;
        let mut line_no = 0usize;
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|p| pos + p)
                .ok_or_else(|| Error::parse(path, line_no + 1, "unterminated header"))?;
            line_no += 1;
            let line = std::str::from_utf8(&bytes[pos..end])
                .map_err(|_| Error::parse(path, line_no, "header is not UTF-8"))?;
            pos = end + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                break;
            }
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let values: Vec<&str> = words.collect();
            match key {
                "dims" => dims = Some(parse_triple::<usize>(&values, path, line_no)?),
                "spacing" => spacing = Some(parse_triple::<f64>(&values, path, line_no)?),
                "origin" => origin = Some(parse_triple::<f64>(&values, path, line_no)?),
                "dtype" => {
                    if values != ["u8"] {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unsupported dtype `{}`", values.join(" ")),
                        ));
                    }
                    dtype_seen = true;
                }
                other => {
                    return Err(Error::parse(path, line_no, format!("unknown header key `{other}`")))
                }
            }
        }
        let missing = |what: &str| Error::parse(path, line_no, format!("header lacks `{what}`"));
        let dims = dims.ok_or_else(|| missing("dims"))?;
        let spacing = spacing.ok_or_else(|| missing("spacing"))?;
        let origin = origin.ok_or_else(|| missing("origin"))?;
        if !dtype_seen {
            return Err(missing("dtype"));
        }
        let geometry = GridGeometry::new(dims, spacing, origin)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let body = &bytes[pos..];
        if body.len() != geometry.voxel_count() {
            return Err(Error::parse(
                path,
                line_no + 1,
                format!("expected {} voxel bytes, found {}", geometry.voxel_count(), body.len()),
            ));
        }
        Ok(Self {
            geometry,
            labels: body.to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_vmask_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_vmask_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn parse_triple<T: std::str::FromStr>(values: &[&str], path: &Path, line: usize) -> Result<[T; 3]> {
    if values.len() != 3 {
        return Err(Error::parse(path, line, format!("expected 3 values, got {}", values.len())));
    }
    let parse = |s: &str| {
        s.parse::<T>()
            .map_err(|_| Error::parse(path, line, format!("cannot parse `{s}`")))
    };
    Ok([parse(values[0])?, parse(values[1])?, parse(values[2])?])
}
