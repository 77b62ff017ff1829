//! Exact k-nearest-neighbor queries.

use super::{dist2, Point3};
use crate::error::{Error, Result};

/// For every query, the `k` nearest reference indices by Euclidean
/// distance, ascending, ties to the lower reference index. Returned as a
/// row-major `queries.len() x k` matrix.
pub fn knn(queries: &[Point3], reference: &[Point3], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > reference.len() {
        return Err(Error::BadK {
            k,
            available: reference.len(),
        });
    }
    let mut out = Vec::with_capacity(queries.len() * k);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for q in queries {
        best.clear();
        for (j, r) in reference.iter().enumerate() {
            let d = dist2(q, r);
            if best.len() == k {
                // Scanning in index order, an equal distance never displaces
                // an earlier (lower-index) entry.
                if d >= best[k - 1].0 {
                    continue;
                }
                best.pop();
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j));
        }
        out.extend(best.iter().map(|&(_, j)| j));
    }
    Ok(out)
}

/// Nearest reference point for every query (ties to the lower index).
pub fn nearest(queries: &[Point3], reference: &[Point3]) -> Result<Vec<usize>> {
    knn(queries, reference, 1)
}
