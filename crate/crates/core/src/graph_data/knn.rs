use ndarray::{Array2, ArrayView1};

use super::Adjacency;
use crate::error::{Error, Result};

/// Symmetric kNN graph over feature rows (Euclidean distance).
///
/// `u` and `v` are joined iff `v` is among the `k` nearest rows to `u` or
/// vice versa. Equal distances are broken toward the lower node index.
pub fn knn_graph(features: &Array2<f64>, k: usize) -> Result<Adjacency> {
    let n = features.nrows();
    if k < 1 || k >= n {
        return Err(Error::invalid(format!(
            "knn k must satisfy 1 <= k < node_count ({n}), got {k}"
        )));
    }

    let mut edges = Vec::with_capacity(n * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for u in 0..n {
        let row = features.row(u);
        candidates.clear();
        candidates.extend(
            (0..n)
                .filter(|&v| v != u)
                .map(|v| (squared_distance(row, features.row(v)), v)),
        );
        let by_distance =
            |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, by_distance);
        }
        edges.extend(candidates[..k].iter().map(|&(_, v)| (u, v)));
    }
    Adjacency::from_edges(n, edges)
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::Rng;

    use super::*;
    use crate::seed;

    #[test]
    fn collinear_points_k1() {
        let x = array![[0.0], [1.0], [10.0]];
        let adj = knn_graph(&x, 1).unwrap();
        assert_eq!(adj.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn k_equals_n_minus_one_is_complete() {
        let x = array![[0.0], [1.0], [10.0]];
        let adj = knn_graph(&x, 2).unwrap();
        assert_eq!(adj.edge_count(), 3);
    }

    #[test]
    fn rejects_out_of_range_k() {
        let x = array![[0.0], [1.0]];
        assert!(knn_graph(&x, 0).is_err());
        assert!(knn_graph(&x, 2).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        // node 1 is equidistant from 0 and 2
        let x = array![[0.0], [1.0], [2.0]];
        let adj = knn_graph(&x, 1).unwrap();
        assert!(adj.has_edge(1, 0));
        // 2's nearest is 1, so 1-2 exists through 2's choice only
        assert!(adj.has_edge(2, 1));
    }

    /// Full-sort oracle over all pairwise distances.
    fn brute_force(x: &Array2<f64>, k: usize) -> Vec<(usize, usize)> {
        let n = x.nrows();
        let mut set = std::collections::BTreeSet::new();
        for u in 0..n {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&v| v != u)
                .map(|v| {
                    let d: f64 = (0..x.ncols())
                        .map(|j| (x[[u, j]] - x[[v, j]]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    (d, v)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, v) in &all[..k] {
                set.insert((u.min(v), u.max(v)));
            }
        }
        set.into_iter().collect()
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = seed::rng(99);
        for trial in 0..5 {
            let x = Array2::from_shape_fn((20, 3), |_| rng.random::<f64>());
            let adj = knn_graph(&x, 3).unwrap();
            assert_eq!(adj.edges().collect::<Vec<_>>(), brute_force(&x, 3), "trial {trial}");
            assert!(adj.is_symmetric());
        }
    }
}
