//! Random rigid motions used as online training augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud};

/// Rotation about each axis uniform in `±max_angle_deg` (about the cloud
/// centroid) followed by a translation uniform in `±max_shift_mm` per axis.
/// Kept small because left/right anatomy makes labels orientation dependent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    pub max_angle_deg: f64,
    pub max_shift_mm: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            max_angle_deg: 10.0,
            max_shift_mm: 5.0,
        }
    }
}

impl Augmentation {
    pub fn apply(&self, cloud: &PointCloud, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.max_angle_deg.to_radians();
        let s = self.max_shift_mm;
        let mut draw = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let angles = [draw(a), draw(a), draw(a)];
        let shift = [draw(s), draw(s), draw(s)];
        rigid_transform(cloud, angles, shift)
    }
}

/// Rotates by `R = Rz * Ry * Rx` about the centroid, then translates; the
/// normalized channel is recomputed.
pub fn rigid_transform(cloud: &PointCloud, angles: [f64; 3], shift: [f64; 3]) -> PointCloud {
    let r = rotation(angles);
    let c = centroid(&cloud.positions_raw);
    let mut out = cloud.clone();
    for p in &mut out.positions_raw {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for a in 0..3 {
            p[a] = c[a] + r[a][0] * d[0] + r[a][1] * d[1] + r[a][2] * d[2] + shift[a];
        }
    }
    out.renormalize();
    out
}

fn rotation([x, y, z]: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sz, cz) = z.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mul(&rz, &mul(&ry, &rx))
}

fn mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len().max(1) as f64;
    points.iter().fold([0.0; 3], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n, acc[2] + p[2] / n])
}
