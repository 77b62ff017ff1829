//! Slow, obviously-correct reference implementations shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

use arterylabel::geometry::{CenterlinePolyline, GridGeometry, Point3, VoxelMask};

fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Full sort of every reference point per query.
pub fn knn(queries: &[Point3], reference: &[Point3], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for q in queries {
        let mut all: Vec<(f64, usize)> = reference.iter().enumerate().map(|(j, r)| (d2(q, r), j)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.extend(all[..k].iter().map(|&(_, j)| j));
    }
    out
}

/// Recomputes each candidate's distance to the whole chosen set at every
/// step.
pub fn fps(positions: &[Point3], count: usize) -> Vec<usize> {
    let first = (0..positions.len())
        .min_by(|&a, &b| positions[a].partial_cmp(&positions[b]).unwrap().then(a.cmp(&b)))
        .unwrap();
    let mut chosen = vec![first];
    while chosen.len() < count {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..positions.len() {
            if chosen.contains(&i) {
                continue;
            }
            let m = chosen.iter().map(|&c| d2(&positions[i], &positions[c])).fold(f64::INFINITY, f64::min);
            if m > best.0 {
                best = (m, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

/// Distance from `p` to segment `ab` by minimizing over the projection
/// parameter.
fn segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let dir: Vec<f64> = (0..3).map(|i| b[i] - a[i]).collect();
    let len2: f64 = dir.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        ((0..3).map(|i| (p[i] - a[i]) * dir[i]).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * dir[0], a[1] + t * dir[1], a[2] + t * dir[2]];
    d2(p, &q)
}

/// Every voxel of the grid tested against every segment.
pub fn dilate(line: &CenterlinePolyline, radius: f64, grid: &GridGeometry) -> Vec<usize> {
    let v = &line.vertices;
    let segs: Vec<(Point3, Point3)> = if v.len() == 1 {
        vec![(v[0], v[0])]
    } else {
        (1..v.len()).map(|i| (v[i - 1], v[i])).collect()
    };
    let mut out = Vec::new();
    for idx in 0..grid.voxel_count() {
        let c = grid.voxel_center(grid.grid_index(idx));
        if segs.iter().any(|(a, b)| segment_distance(&c, a, b) <= radius * radius) {
            out.push(idx);
        }
    }
    out
}

/// (hits of `class`, dilated size).
pub fn overlap(line: &CenterlinePolyline, radius: f64, mask: &VoxelMask, class: u8) -> (usize, usize) {
    let set = dilate(line, radius, &mask.geometry);
    (set.iter().filter(|&&i| mask.labels[i] == class).count(), set.len())
}

pub fn propagate(sampled: &[Point3], labels: &[u8], targets: &[Point3]) -> Vec<u8> {
    targets
        .iter()
        .map(|t| {
            let mut best = (f64::INFINITY, 0);
            for (j, s) in sampled.iter().enumerate() {
                let d = d2(t, s);
                if d < best.0 {
                    best = (d, j);
                }
            }
            labels[best.1]
        })
        .collect()
}

/// Voxel accuracy recounted straight from two masks.
pub fn voxel_accuracy(truth: &VoxelMask, predicted: &VoxelMask) -> (u64, u64) {
    let mut correct = 0;
    let mut total = 0;
    for (t, p) in truth.labels.iter().zip(&predicted.labels) {
        if *t != 0 {
            total += 1;
            if t == p {
                correct += 1;
            }
        }
    }
    (correct, total)
}
