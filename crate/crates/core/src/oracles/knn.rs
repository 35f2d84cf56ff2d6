use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::event_model::NormalizedEvent;

/// Distance used to define a neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMetric {
    /// `(x1, x2)` only.
    Spatial,
    /// `x3` only.
    Temporal,
    /// `(x1, x2, x3)`.
    Euclidean3d,
}

fn sq_dist(a: &NormalizedEvent, b: &NormalizedEvent, metric: KnnMetric) -> f64 {
    let dt = a.x3 - b.x3;
    match metric {
        KnnMetric::Temporal => dt * dt,
        KnnMetric::Spatial => (a.x1 - b.x1).powi(2) + (a.x2 - b.x2).powi(2),
        KnnMetric::Euclidean3d => (a.x1 - b.x1).powi(2) + (a.x2 - b.x2).powi(2) + dt * dt,
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(Error::Parameter(format!("K = {k} exceeds the point count {n}")));
    }
    Ok(())
}

/// Exact K nearest neighbors of every point, itself excluded.
///
/// Each candidate row is fully sorted by `(distance, index)`, so ties resolve
/// to the lower index. When `k == n` a list holds the `n - 1` other points.
pub fn knn_oracle(points: &[NormalizedEvent], k: usize, metric: KnnMetric) -> Result<Vec<Vec<usize>>> {
    check_k(points.len(), k)?;
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            row.clear();
            row.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| (sq_dist(p, q, metric), j)));
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row.iter().take(k).map(|&(_, j)| j).collect()
        })
        .collect())
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Second, independently written brute-force pass using a bounded max-heap.
pub fn knn_heap_pass(points: &[NormalizedEvent], k: usize, metric: KnnMetric) -> Result<Vec<Vec<usize>>> {
    check_k(points.len(), k)?;
    let mut out = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for j in 0..points.len() {
            if j == i {
                continue;
            }
            let cand = Candidate(sq_dist(&points[i], &points[j], metric), j);
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(top) = heap.peek() {
                if cand < *top {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        out.push(heap.into_sorted_vec().into_iter().map(|c| c.1).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x1: f64, x2: f64, x3: f64) -> NormalizedEvent {
        NormalizedEvent { h: 0, w: 0, x1, x2, x3, p_acc: 1.0, c: 1.0 }
    }

    #[test]
    fn collinear_endpoints_pick_middle() {
        let pts = [pt(0.0, 0.0, 0.0), pt(0.4, 0.0, 0.0), pt(1.0, 0.0, 0.0)];
        let nn = knn_oracle(&pts, 1, KnnMetric::Spatial).unwrap();
        assert_eq!(nn[0], vec![1]);
        assert_eq!(nn[2], vec![1]);
    }

    #[test]
    fn duplicates_come_first_self_excluded() {
        let pts = [pt(0.5, 0.5, 0.1), pt(0.9, 0.9, 0.2), pt(0.5, 0.5, 0.3)];
        let nn = knn_oracle(&pts, 2, KnnMetric::Spatial).unwrap();
        assert_eq!(nn[0], vec![2, 1]);
        assert_eq!(nn[2], vec![0, 1]);
    }

    #[test]
    fn k_above_n_rejected() {
        let pts = [pt(0.0, 0.0, 0.0)];
        assert!(matches!(knn_oracle(&pts, 2, KnnMetric::Temporal), Err(Error::Parameter(_))));
        assert!(knn_heap_pass(&pts, 2, KnnMetric::Temporal).is_err());
    }

    #[test]
    fn two_passes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<NormalizedEvent> = (0..1000).map(|_| pt(rng.gen(), rng.gen(), rng.gen())).collect();
        for metric in [KnnMetric::Spatial, KnnMetric::Temporal, KnnMetric::Euclidean3d] {
            assert_eq!(knn_oracle(&pts, 16, metric).unwrap(), knn_heap_pass(&pts, 16, metric).unwrap());
        }
    }

    #[test]
    fn permutation_invariant_up_to_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<NormalizedEvent> = (0..200).map(|_| pt(rng.gen(), rng.gen(), rng.gen())).collect();
        let perm: Vec<usize> = (0..200).rev().collect();
        let shuffled: Vec<NormalizedEvent> = perm.iter().map(|&i| pts[i]).collect();
        let a = knn_oracle(&pts, 8, KnnMetric::Euclidean3d).unwrap();
        let b = knn_oracle(&shuffled, 8, KnnMetric::Euclidean3d).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            let mapped: Vec<usize> = b[new_i].iter().map(|&j| perm[j]).collect();
            assert_eq!(mapped, a[old_i]);
        }
    }
}
