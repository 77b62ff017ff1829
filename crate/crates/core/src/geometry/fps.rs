//! Deterministic farthest point sampling.

use super::{dist2, Point3};
use crate::error::{Error, Result};

/// Greedy max-min subset selection.
///
/// The first pick is the lexicographically smallest position; every later
/// pick maximizes the distance to the already chosen set. Ties go to the
/// lowest index, so the selected positions do not depend on input order
/// (for inputs without exact distance ties).
pub fn farthest_point_sampling(positions: &[Point3], count: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if count == 0 || count > n {
        return Err(Error::BadCount {
            count,
            available: n,
        });
    }
    let mut first = 0;
    for i in 1..n {
        if lex_less(&positions[i], &positions[first]) {
            first = i;
        }
    }
    let mut picked = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(count);
    let mut current = first;
    loop {
        picked[current] = true;
        order.push(current);
        if order.len() == count {
            break;
        }
        let c = positions[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for i in 0..n {
            if picked[i] {
                continue;
            }
            let d = dist2(&positions[i], &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(order)
}

fn lex_less(a: &Point3, b: &Point3) -> bool {
    a.partial_cmp(b) == Some(std::cmp::Ordering::Less)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_pair_picks_the_ends() {
        let pts: Vec<Point3> = (0..10).map(|x| [x as f64, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_sampling(&pts, 2).unwrap(), vec![0, 9]);
    }

    #[test]
    fn start_is_lexicographic_minimum() {
        let pts = vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 1).unwrap(), vec![1]);
    }

    #[test]
    fn full_count_returns_every_index() {
        let pts: Vec<Point3> = (0..7).map(|i| [(i * 3 % 7) as f64, 1.0, 0.0]).collect();
        let mut idx = farthest_point_sampling(&pts, 7).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn duplicates_still_yield_distinct_indices() {
        let pts = vec![[0.0; 3]; 4];
        assert_eq!(farthest_point_sampling(&pts, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn bad_counts() {
        let pts = vec![[0.0; 3]; 3];
        assert!(farthest_point_sampling(&pts, 0).is_err());
        assert!(farthest_point_sampling(&pts, 4).is_err());
    }
}
