//! Procedural coronary-like trees: smoothed random-walk centerlines with
//! tapering radii, voxelized into a labeled mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{dist2, CenterlinePolyline, GridGeometry, Point3, VoxelMask};

use super::config::{BranchShape, SynthConfig};
use super::taxonomy::Branch;

/// Centerline walk step in mm.
const STEP: f64 = 1.0;
/// Parent/child pairs ignore each other within this distance of their
/// junction, where they legitimately touch.
const JUNCTION_ZONE: f64 = 8.0;

/// One generated branch with per-vertex radii.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBranch {
    pub branch: Branch,
    pub vertices: Vec<Point3>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTree {
    pub branches: Vec<SynthBranch>,
    pub mask: VoxelMask,
    /// Attempts consumed before the checks passed.
    pub attempts: usize,
}

impl SynthTree {
    pub fn centerlines(&self) -> Vec<CenterlinePolyline> {
        self.branches
            .iter()
            .map(|b| CenterlinePolyline {
                branch_id: b.branch.name().to_string(),
                vertices: b.vertices.clone(),
                label: Some(b.branch.class()),
            })
            .collect()
    }
}

/// SplitMix64 mixing of a seed with a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_tree(config: &SynthConfig, seed: u64) -> Result<SynthTree> {
    config.validate()?;
    let grid = GridGeometry::new(config.dims, config.spacing, config.origin)?;
    for attempt in 0..config.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let branches = grow(config, &mut rng);
        if within_grid(&branches, &grid) && clear_of_each_other(&branches, config.clearance) {
            let mask = voxelize(&branches, &grid);
            return Ok(SynthTree {
                branches,
                mask,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::ConfigInvalid(format!(
        "no valid tree within {} attempts for seed {seed}",
        config.max_attempts
    )))
}

fn grow(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SynthBranch> {
    let mut out: Vec<SynthBranch> = Vec::with_capacity(Branch::ALL.len());
    for b in Branch::ALL {
        // Draw presence for every optional branch so later draws do not
        // depend on earlier outcomes more than necessary.
        let present = !b.optional() || rng.gen_bool(config.optional_probability);
        let shape = config.shape(b);
        let (start, direction) = match b.parent() {
            None => {
                let start = if b == Branch::Lm {
                    config.left_ostium
                } else {
                    config.right_ostium
                };
                (start, normalize(shape.heading))
            }
            Some(p) => {
                let parent = out.iter().find(|s| s.branch == p).expect("parents grow first");
                let n = parent.vertices.len();
                let fraction = uniform(rng, shape.origin_fraction);
                let at = ((fraction * (n - 1) as f64).round() as usize).min(n - 1);
                let tangent = tangent_at(&parent.vertices, at);
                let angle = uniform(rng, shape.angle_deg).to_radians();
                (parent.vertices[at], turn_toward(tangent, shape.heading, angle))
            }
        };
        let branch = walk(config, shape, b, start, direction, rng);
        if present {
            out.push(branch);
        }
    }
    out
}

fn walk(
    config: &SynthConfig,
    shape: &BranchShape,
    branch: Branch,
    start: Point3,
    direction: Point3,
    rng: &mut ChaCha8Rng,
) -> SynthBranch {
    let length = uniform(rng, shape.length);
    let steps = (length / STEP).round().max(1.0) as usize;
    let noise = Normal::new(0.0, config.curvature_noise).expect("validated");
    let mut vertices = Vec::with_capacity(steps + 1);
    vertices.push(start);
    let mut d = direction;
    for _ in 0..steps {
        let jitter = [noise.sample(rng), noise.sample(rng), noise.sample(rng)];
        d = normalize([
            d[0] + config.heading_pull * (direction[0] - d[0]) + jitter[0],
            d[1] + config.heading_pull * (direction[1] - d[1]) + jitter[1],
            d[2] + config.heading_pull * (direction[2] - d[2]) + jitter[2],
        ]);
        let last = *vertices.last().unwrap();
        vertices.push([last[0] + STEP * d[0], last[1] + STEP * d[1], last[2] + STEP * d[2]]);
    }
    smooth(&mut vertices);
    vertices.dedup_by(|a, b| dist2(a, b) < 1e-12);

    let mut arc = Vec::with_capacity(vertices.len());
    let mut s = 0.0;
    arc.push(0.0);
    for w in vertices.windows(2) {
        s += dist2(&w[0], &w[1]).sqrt();
        arc.push(s);
    }
    let total = s.max(f64::MIN_POSITIVE);
    let [r0, r1] = shape.radius;
    let radii = arc.iter().map(|a| r0 + (r1 - r0) * a / total).collect();
    SynthBranch {
        branch,
        vertices,
        radii,
    }
}

/// Two passes of a 5-tap moving average with pinned endpoints.
fn smooth(v: &mut [Point3]) {
    let n = v.len();
    if n < 5 {
        return;
    }
    for _ in 0..2 {
        let src = v.to_vec();
        for i in 1..n - 1 {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n - 1);
            let count = (hi - lo + 1) as f64;
            for a in 0..3 {
                v[i][a] = src[lo..=hi].iter().map(|p| p[a]).sum::<f64>() / count;
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn normalize(v: Point3) -> Point3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn tangent_at(v: &[Point3], i: usize) -> Point3 {
    let a = v[i.saturating_sub(1)];
    let b = v[(i + 1).min(v.len() - 1)];
    normalize([b[0] - a[0], b[1] - a[1], b[2] - a[2]])
}

/// Rotates `tangent` by `angle` toward the part of `heading` orthogonal to it.
fn turn_toward(tangent: Point3, heading: Point3, angle: f64) -> Point3 {
    let h = normalize(heading);
    let along = dot(h, tangent);
    let mut side = [h[0] - along * tangent[0], h[1] - along * tangent[1], h[2] - along * tangent[2]];
    if dot(side, side) < 1e-12 {
        // Heading parallel to the tangent: any perpendicular will do.
        side = if tangent[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let along = dot(side, tangent);
        side = [side[0] - along * tangent[0], side[1] - along * tangent[1], side[2] - along * tangent[2]];
    }
    let side = normalize(side);
    let (s, c) = angle.sin_cos();
    normalize([
        c * tangent[0] + s * side[0],
        c * tangent[1] + s * side[1],
        c * tangent[2] + s * side[2],
    ])
}

/// Every tube keeps at least one voxel of margin to the grid border.
fn within_grid(branches: &[SynthBranch], grid: &GridGeometry) -> bool {
    let margin = grid.spacing.iter().cloned().fold(0.0, f64::max);
    branches.iter().all(|b| {
        b.vertices.iter().zip(&b.radii).all(|(p, r)| {
            (0..3).all(|a| {
                let lo = grid.origin[a];
                let hi = lo + (grid.dims[a] - 1) as f64 * grid.spacing[a];
                p[a] - r - margin >= lo && p[a] + r + margin <= hi
            })
        })
    })
}

/// Squared distance from `p` to segment `ab` and the segment parameter of
/// the closest point.
fn project(p: &Point3, a: &Point3, b: &Point3) -> (f64, f64) {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot([p[0] - a[0], p[1] - a[1], p[2] - a[2]], ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    (dist2(p, &q), t)
}

fn related(a: Branch, b: Branch) -> bool {
    a.parent() == Some(b) || b.parent() == Some(a) || (a.parent().is_some() && a.parent() == b.parent())
}

/// Unrelated branches keep `clearance` between their tube surfaces; related
/// ones (parent/child, siblings) are exempt near their junction.
fn clear_of_each_other(branches: &[SynthBranch], clearance: f64) -> bool {
    for (i, a) in branches.iter().enumerate() {
        for b in &branches[i + 1..] {
            let junctions: Vec<Point3> = if related(a.branch, b.branch) {
                vec![a.vertices[0], b.vertices[0]]
            } else {
                Vec::new()
            };
            for (x, y) in [(a, b), (b, a)] {
                for (p, rp) in x.vertices.iter().zip(&x.radii) {
                    if junctions.iter().any(|j| dist2(p, j) < JUNCTION_ZONE * JUNCTION_ZONE) {
                        continue;
                    }
                    for (k, w) in y.vertices.windows(2).enumerate() {
                        let (d2, t) = project(p, &w[0], &w[1]);
                        let rq = y.radii[k] + t * (y.radii[k + 1] - y.radii[k]);
                        let need = rp + rq + clearance;
                        if d2 < need * need {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

/// Each voxel whose center lies inside at least one tube takes the class of
/// the nearest such centerline; exact ties go to the lower class.
pub fn voxelize(branches: &[SynthBranch], grid: &GridGeometry) -> VoxelMask {
    let mut mask = VoxelMask::empty(*grid);
    let mut best = vec![f64::INFINITY; grid.voxel_count()];
    for b in branches {
        let class = b.branch.class();
        let pairs: Vec<(usize, usize)> = if b.vertices.len() == 1 {
            vec![(0, 0)]
        } else {
            (0..b.vertices.len() - 1).map(|k| (k, k + 1)).collect()
        };
        for (ka, kb) in pairs {
            let (pa, pb) = (&b.vertices[ka], &b.vertices[kb]);
            let (ra, rb) = (b.radii[ka], b.radii[kb]);
            let r = ra.max(rb);
            let mut ranges = [(0, 0); 3];
            let mut empty = false;
            for a in 0..3 {
                match grid.index_range(a, pa[a].min(pb[a]) - r, pa[a].max(pb[a]) + r) {
                    Some(range) => ranges[a] = range,
                    None => empty = true,
                }
            }
            if empty {
                continue;
            }
            for k in ranges[2].0..=ranges[2].1 {
                for j in ranges[1].0..=ranges[1].1 {
                    for i in ranges[0].0..=ranges[0].1 {
                        let p = grid.voxel_center([i, j, k]);
                        let (d2, t) = project(&p, pa, pb);
                        let rt = ra + t * (rb - ra);
                        if d2 > rt * rt {
                            continue;
                        }
                        let v = grid.linear_index([i, j, k]);
                        let cur = mask.labels[v];
                        if d2 < best[v] || (d2 == best[v] && class < cur) {
                            best[v] = d2;
                            mask.labels[v] = class;
                        }
                    }
                }
            }
        }
    }
    mask
}
