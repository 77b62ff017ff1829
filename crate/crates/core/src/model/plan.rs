//! Index structures of one forward pass: per-level point subsets, attention
//! neighborhoods, pooling groups, and interpolation stencils.
//!
//! Everything here depends only on point positions, so it is computed once
//! per batch in `f64` and shared by every layer. Batch elements are stacked
//! along the point axis and all indices are global row indices.

use crate::error::{Error, Result};
use crate::geometry::{dist2, farthest_point_sampling, knn, Point3};

use super::config::{ArchConfig, INTERP_NEIGHBORS};

/// `h` neighbors per point with their relative positions `p_i - p_j`.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub h: usize,
    /// Row-major `points x h` global indices.
    pub index: Vec<usize>,
    /// Row-major `points x h` offsets from each neighbor to its center.
    pub offsets: Vec<Point3>,
}

impl Neighborhood {
    /// Builds a neighborhood from explicit indices into `positions`.
    pub fn new(positions: &[Point3], index: Vec<usize>, h: usize) -> Result<Self> {
        if h == 0 || index.len() != positions.len() * h {
            return Err(Error::ShapeMismatch(format!(
                "{} neighbor indices for {} points with h = {h}",
                index.len(),
                positions.len()
            )));
        }
        let mut offsets = Vec::with_capacity(index.len());
        for (row, nbrs) in index.chunks_exact(h).enumerate() {
            for &j in nbrs {
                let pj = positions
                    .get(j)
                    .ok_or(Error::BadNeighborIndex { index: j, count: positions.len() })?;
                let pi = positions[row];
                offsets.push([pi[0] - pj[0], pi[1] - pj[1], pi[2] - pj[2]]);
            }
        }
        Ok(Self { h, index, offsets })
    }

    pub fn points(&self) -> usize {
        self.index.len() / self.h
    }
}

/// Grouping for one downsampling step.
#[derive(Debug, Clone)]
pub struct DownPlan {
    pub h: usize,
    /// Row-major `centers x h` indices into the previous level.
    pub index: Vec<usize>,
}

/// Inverse-distance stencil carrying coarse features onto finer points.
#[derive(Debug, Clone)]
pub struct UpPlan {
    pub k: usize,
    /// Row-major `fine x k` indices into the coarse level.
    pub index: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LevelPlan {
    /// Points per batch element.
    pub size: usize,
    /// Stacked positions (`batch * size`).
    pub positions: Vec<Point3>,
    pub attention: Neighborhood,
    /// How this level is pooled from the previous one (absent at level 0).
    pub down: Option<DownPlan>,
}

#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub batch: usize,
    pub levels: Vec<LevelPlan>,
    /// `ups[l]` interpolates level `l + 1` onto level `l`.
    pub ups: Vec<UpPlan>,
}

impl BatchPlan {
    /// Plans a batch of equally sized clouds given their millimeter positions.
    pub fn new(config: &ArchConfig, clouds: &[&[Point3]]) -> Result<Self> {
        config.validate()?;
        let batch = clouds.len();
        let n = clouds.first().map_or(0, |c| c.len());
        if batch == 0 || n == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        if let Some(c) = clouds.iter().find(|c| c.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "batch elements must share a point count ({n} vs {})",
                c.len()
            )));
        }
        let sizes = config.level_sizes(n)?;

        // Per-element positions of the current level.
        let mut current: Vec<Vec<Point3>> = clouds.iter().map(|c| c.to_vec()).collect();
        let mut levels: Vec<LevelPlan> = Vec::with_capacity(sizes.len());
        for (l, &size) in sizes.iter().enumerate() {
            let down = if l == 0 {
                None
            } else {
                let prev = levels[l - 1].size;
                let h = config.neighbors_h.min(prev);
                let mut index = Vec::with_capacity(batch * size * h);
                let mut next = Vec::with_capacity(batch);
                for (b, pts) in current.iter().enumerate() {
                    let centers: Vec<Point3> = farthest_point_sampling(pts, size)?
                        .into_iter()
                        .map(|i| pts[i])
                        .collect();
                    index.extend(knn(&centers, pts, h)?.into_iter().map(|i| i + b * prev));
                    next.push(centers);
                }
                current = next;
                Some(DownPlan { h, index })
            };
            let h = config.neighbors_h.min(size);
            let mut index = Vec::with_capacity(batch * size * h);
            for (b, pts) in current.iter().enumerate() {
                index.extend(knn(pts, pts, h)?.into_iter().map(|i| i + b * size));
            }
            let positions: Vec<Point3> = current.iter().flatten().copied().collect();
            let attention = Neighborhood::new(&positions, index, h)?;
            levels.push(LevelPlan {
                size,
                positions,
                attention,
                down,
            });
        }

        let mut ups = Vec::with_capacity(levels.len().saturating_sub(1));
        for l in 0..levels.len().saturating_sub(1) {
            let (fine, coarse) = (&levels[l], &levels[l + 1]);
            ups.push(interpolation_stencil(
                &fine.positions,
                &coarse.positions,
                batch,
                fine.size,
                coarse.size,
            )?);
        }
        Ok(Self { batch, levels, ups })
    }

    pub fn points(&self) -> usize {
        self.levels[0].positions.len()
    }
}

/// Normalized inverse-distance weights over the nearest coarse points; a
/// coarse point coinciding with the fine point takes all the weight.
fn interpolation_stencil(
    fine: &[Point3],
    coarse: &[Point3],
    batch: usize,
    fine_size: usize,
    coarse_size: usize,
) -> Result<UpPlan> {
    let k = INTERP_NEIGHBORS.min(coarse_size);
    let mut index = Vec::with_capacity(fine.len() * k);
    let mut weights = Vec::with_capacity(fine.len() * k);
    for b in 0..batch {
        let f = &fine[b * fine_size..(b + 1) * fine_size];
        let c = &coarse[b * coarse_size..(b + 1) * coarse_size];
        let nbrs = knn(f, c, k)?;
        for (p, row) in f.iter().zip(nbrs.chunks_exact(k)) {
            let d: Vec<f64> = row.iter().map(|&j| dist2(p, &c[j]).sqrt()).collect();
            if d[0] == 0.0 {
                // knn rows are sorted by distance, so a coincident point is first.
                weights.push(1.0);
                weights.extend(std::iter::repeat(0.0).take(k - 1));
            } else {
                let inv: Vec<f64> = d.iter().map(|d| 1.0 / (d + 1e-8)).collect();
                let total: f64 = inv.iter().sum();
                weights.extend(inv.iter().map(|w| w / total));
            }
            index.extend(row.iter().map(|&j| j + b * coarse_size));
        }
    }
    Ok(UpPlan { k, index, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect()
    }

    fn config(channels: &[usize], rates: &[usize], h: usize) -> ArchConfig {
        ArchConfig {
            channels: channels.to_vec(),
            rates: rates.to_vec(),
            blocks_per_stage: 1,
            neighbors_h: h,
            num_classes_k: 3,
            stem_channels: channels[0],
        }
    }

    #[test]
    fn level_sizes_and_global_indices() {
        let a = random_points(512, 1);
        let b = random_points(512, 2);
        let plan = BatchPlan::new(&ArchConfig::default(), &[&a, &b]).unwrap();
        let sizes: Vec<usize> = plan.levels.iter().map(|l| l.size).collect();
        assert_eq!(sizes, vec![512, 256, 128, 32, 8]);
        for (l, level) in plan.levels.iter().enumerate() {
            assert_eq!(level.positions.len(), 2 * level.size);
            // Neighbors never cross batch elements.
            for (row, nbrs) in level.attention.index.chunks_exact(level.attention.h).enumerate() {
                let elem = row / level.size;
                assert!(nbrs.iter().all(|&j| j / level.size == elem));
                assert_eq!(nbrs[0], row, "a point is its own nearest neighbor");
            }
            if l > 0 {
                let down = level.down.as_ref().unwrap();
                let prev = plan.levels[l - 1].size;
                for (row, nbrs) in down.index.chunks_exact(down.h).enumerate() {
                    assert!(nbrs.iter().all(|&j| j / prev == row / level.size));
                }
            }
        }
        // The coarsest level has 8 points, so attention there uses h = 8.
        assert_eq!(plan.levels[4].attention.h, 8);
    }

    #[test]
    fn rate_one_keeps_every_point() {
        let pts = random_points(40, 3);
        let plan = BatchPlan::new(&config(&[4, 4], &[1, 1], 5), &[&pts]).unwrap();
        let mut a = plan.levels[1].positions.clone();
        let mut b = pts.clone();
        let key = |p: &Point3| (p[0].to_bits(), p[1].to_bits(), p[2].to_bits());
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a, b);
        // Coincident coarse points make interpolation an exact copy.
        for row in plan.ups[0].weights.chunks_exact(plan.ups[0].k) {
            assert_eq!(row, &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn interpolation_weights_are_a_partition_of_unity() {
        let pts = random_points(100, 4);
        let plan = BatchPlan::new(&config(&[4, 8, 8], &[1, 4, 4], 6), &[&pts]).unwrap();
        for up in &plan.ups {
            for row in up.weights.chunks_exact(up.k) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            }
        }
        assert_eq!(plan.levels[2].size, 7);
    }

    #[test]
    fn mismatched_batch_sizes_are_rejected() {
        let a = random_points(10, 5);
        let b = random_points(11, 6);
        assert!(BatchPlan::new(&config(&[4], &[1], 4), &[&a, &b]).is_err());
    }

    #[test]
    fn neighborhood_validates_indices() {
        let pts = random_points(3, 7);
        assert!(matches!(
            Neighborhood::new(&pts, vec![0, 1, 2, 3, 0, 1], 2),
            Err(Error::BadNeighborIndex { index: 3, count: 3 })
        ));
        let n = Neighborhood::new(&pts, vec![0, 1, 1, 2, 2, 0], 2).unwrap();
        assert_eq!(n.offsets[0], [0.0; 3]);
    }
}
