use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::{Error, Result};

/// Undirected edge with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub distance: f64,
    pub similarity: f64,
}

/// Similarity bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Mean distance over every stored k-NN entry.
    MeanKnnDistance,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    /// Per node, its `k` nearest neighbors as `(index, distance)`, nearest
    /// first.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Symmetrized edge set, sorted by `(u, v)`.
    pub edges: Vec<Edge>,
    pub sigma: f64,
}

pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-d²/σ²)`, or 1 when σ is 0.
pub fn similarity(distance: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        (-(distance * distance) / (sigma * sigma)).exp()
    }
}

/// Exact Euclidean k-NN by exhaustive search; equal distances go to the
/// lower index. An edge joins `u` and `v` when either lists the other.
pub fn build_knn_graph(points: &Array2<f64>, k: usize, sigma_mode: SigmaMode) -> Result<KnnGraph> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!("k = {k} needs 1 <= k < node count {n}")));
    }
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let row = points.row(u);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&v| v != u)
                .map(|v| (squared_distance(row, points.row(v)), v))
                .collect();
            cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().map(|(d2, v)| (v, d2.sqrt())).collect()
        })
        .collect();

    let sigma = match sigma_mode {
        SigmaMode::Fixed(s) if s >= 0.0 && s.is_finite() => s,
        SigmaMode::Fixed(s) => return Err(Error::InvalidParameter(format!("sigma {s}"))),
        SigmaMode::MeanKnnDistance => {
            neighbors.iter().flatten().map(|(_, d)| d).sum::<f64>() / (n * k) as f64
        }
    };
    let mut pairs: Vec<(usize, usize, f64)> = neighbors
        .iter()
        .enumerate()
        .flat_map(|(u, list)| list.iter().map(move |&(v, d)| (u.min(v), u.max(v), d)))
        .collect();
    pairs.sort_by_key(|p| (p.0, p.1));
    pairs.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    let edges = pairs
        .into_iter()
        .map(|(u, v, distance)| Edge {
            u,
            v,
            distance,
            similarity: similarity(distance, sigma),
        })
        .collect();
    Ok(KnnGraph { neighbors, edges, sigma })
}

/// Symmetric adjacency lists `(neighbor, similarity)` from an edge set.
pub fn adjacency(n: usize, edges: &[Edge]) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.u].push((e.v, e.similarity));
        adj[e.v].push((e.u, e.similarity));
    }
    adj
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn collinear_points_k1() {
        let pts = array![[0.0], [1.0], [3.0]];
        let g = build_knn_graph(&pts, 1, SigmaMode::MeanKnnDistance).unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.u, e.v)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
        let adj = adjacency(3, &g.edges);
        assert_eq!(adj[1].len(), 2);
        assert!((g.sigma - (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_points_form_complete_graph() {
        let pts = Array2::from_elem((4, 3), 0.5);
        let g = build_knn_graph(&pts, 3, SigmaMode::MeanKnnDistance).unwrap();
        assert_eq!(g.edges.len(), 6);
        assert!(g.edges.iter().all(|e| e.similarity == 1.0 && e.distance == 0.0));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = array![[0.0], [-1.0], [1.0]];
        let g = build_knn_graph(&pts, 1, SigmaMode::Fixed(1.0)).unwrap();
        assert_eq!(g.neighbors[0], vec![(1, 1.0)]);
    }

    #[test]
    fn k_must_be_below_node_count() {
        let pts = array![[0.0], [1.0]];
        assert!(build_knn_graph(&pts, 2, SigmaMode::MeanKnnDistance).is_err());
        assert!(build_knn_graph(&pts, 0, SigmaMode::MeanKnnDistance).is_err());
    }
}
