//! Communication (and physical) graph: Laplacian algebra, neighbor sets and
//! spectral quantities.
//!
//! Agents are indexed `0..n` internally. Constructors that take user input
//! accept 1-based endpoints, matching the scenario files.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("graph must have at least one agent")]
    Empty,
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),
    #[error("graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },
}

/// Undirected, unweighted, connected graph over `n` agents.
#[derive(Debug, Clone)]
pub struct CommGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    laplacian: DMatrix<f64>,
    laplacian_sq: DMatrix<f64>,
    sigma_max: f64,
    one_hop: Vec<Vec<usize>>,
    two_hop: Vec<Vec<usize>>,
    /// Off-diagonal nonzeros of L² per row: `(j, l_ij)`, `j != i`.
    sq_coeffs: Vec<Vec<(usize, f64)>>,
}

impl CommGraph {
    /// Builds a graph from 1-based edge endpoints.
    pub fn build(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let zero_based = edges
            .iter()
            .map(|&(a, b)| {
                if a == 0 || b == 0 || a > n || b > n {
                    Err(TopologyError::InvalidEdge(a, b, "endpoint out of range"))
                } else {
                    Ok((a - 1, b - 1))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_zero_based(n, &zero_based)
    }

    /// Builds a graph from 0-based edge endpoints.
    pub fn from_zero_based(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(TopologyError::InvalidEdge(a + 1, b + 1, "endpoint out of range"));
            }
            if a == b {
                return Err(TopologyError::InvalidEdge(a + 1, b + 1, "self-loop"));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(TopologyError::InvalidEdge(a + 1, b + 1, "duplicate edge"));
            }
            canon.push(key);
        }

        let mut one_hop = vec![Vec::new(); n];
        for &(a, b) in &canon {
            one_hop[a].push(b);
            one_hop[b].push(a);
        }
        for nb in &mut one_hop {
            nb.sort_unstable();
        }

        let components = count_components(&one_hop, &vec![true; n]);
        if components > 1 {
            return Err(TopologyError::DisconnectedGraph { components });
        }

        let mut laplacian = DMatrix::zeros(n, n);
        for (i, nb) in one_hop.iter().enumerate() {
            laplacian[(i, i)] = nb.len() as f64;
            for &j in nb {
                laplacian[(i, j)] = -1.0;
            }
        }
        let laplacian_sq = &laplacian * &laplacian;

        // N_i² read off the sparsity of L², excluding i and N_i.
        let mut two_hop = vec![Vec::new(); n];
        let mut sq_coeffs = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let l = laplacian_sq[(i, j)];
                if l != 0.0 {
                    sq_coeffs[i].push((j, l));
                    if one_hop[i].binary_search(&j).is_err() {
                        two_hop[i].push(j);
                    }
                }
            }
        }

        let sigma_max = spectral_max(&laplacian);
        Ok(Self {
            n,
            edges: canon,
            laplacian,
            laplacian_sq,
            sigma_max,
            one_hop,
            two_hop,
            sq_coeffs,
        })
    }

    /// Ring 1–2–…–n–1. For `n == 2` this is the single edge.
    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = match n {
            0 => return Err(TopologyError::Empty),
            1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_zero_based(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical 0-based edges `(min, max)` in insertion order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn laplacian_sq(&self) -> &DMatrix<f64> {
        &self.laplacian_sq
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn one_hop(&self, i: usize) -> &[usize] {
        &self.one_hop[i]
    }

    pub fn two_hop(&self, i: usize) -> &[usize] {
        &self.two_hop[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.one_hop[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.one_hop.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub(crate) fn sq_coeffs(&self, i: usize) -> &[(usize, f64)] {
        &self.sq_coeffs[i]
    }

    /// Sorted `N_i ∪ N_i²`.
    pub fn reach(&self, i: usize) -> Vec<usize> {
        let mut r: Vec<usize> = self.one_hop[i].iter().chain(&self.two_hop[i]).copied().collect();
        r.sort_unstable();
        r
    }

    /// Whether the subgraph induced by `active` agents is connected.
    /// An empty active set counts as connected.
    pub fn is_connected_among(&self, active: &[bool]) -> bool {
        count_components(&self.one_hop, active) <= 1
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.one_hop[a].binary_search(&b).is_ok()
    }
}

fn count_components(adj: &[Vec<usize>], active: &[bool]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] || !active[start] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if active[v] && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    components
}

/// Largest eigenvalue of a symmetric matrix via a dense symmetric eigensolve.
pub fn spectral_max(l: &DMatrix<f64>) -> f64 {
    if l.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(l.clone()).eigenvalues.max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn spectral_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Power iteration on L; kept here only as an oracle for the eigensolve.
    fn power_iteration(l: &DMatrix<f64>) -> f64 {
        let n = l.nrows();
        let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.7).sin());
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let y = l * &x;
            let norm = y.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = x.dot(&y) / x.dot(&x);
            x = y / norm;
            if (next - lambda).abs() < 1e-14 * next.abs().max(1.0) {
                return next;
            }
            lambda = next;
        }
        lambda
    }

    fn bfs_two_hop(g: &CommGraph, i: usize) -> Vec<usize> {
        let mut out = BTreeSet::new();
        for &j in g.one_hop(i) {
            for &k in g.one_hop(j) {
                if k != i && !g.contains_edge(i, k) {
                    out.insert(k);
                }
            }
        }
        out.into_iter().collect()
    }

    #[test]
    fn single_node() {
        let g = CommGraph::build(1, &[]).unwrap();
        assert_eq!(g.laplacian()[(0, 0)], 0.0);
        assert_eq!(g.sigma_max(), 0.0);
        assert!(g.two_hop(0).is_empty());
    }

    #[test]
    fn path_of_three() {
        let g = CommGraph::build(3, &[(1, 2), (2, 3)]).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(g.laplacian(), &expected);
        // characteristic polynomial λ(λ-1)(λ-3)
        assert!((g.sigma_max() - 3.0).abs() < 1e-10 * 3.0);
        assert_eq!(g.two_hop(0), &[2]);
        assert!(g.two_hop(1).is_empty());
    }

    #[test]
    fn complete_k2() {
        let g = CommGraph::build(2, &[(1, 2)]).unwrap();
        assert!((g.sigma_max() - 2.0).abs() < 1e-10 * 2.0);
    }

    #[test]
    fn six_ring_sigma_max() {
        let g = CommGraph::build(6, &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 1)]).unwrap();
        // 2 - 2 cos(2πk/6), max at k = 3
        let expected = (0..6)
            .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / 6.0).cos())
            .fold(f64::MIN, f64::max);
        assert!((expected - 4.0).abs() < 1e-12);
        assert!((g.sigma_max() - expected).abs() < 1e-10 * expected);
        assert_eq!(g.two_hop(0), &[2, 4]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(CommGraph::build(3, &[(1, 4)]), Err(TopologyError::InvalidEdge(..))));
        assert!(matches!(CommGraph::build(3, &[(2, 2)]), Err(TopologyError::InvalidEdge(..))));
        assert!(matches!(
            CommGraph::build(3, &[(1, 2), (2, 1)]),
            Err(TopologyError::InvalidEdge(..))
        ));
        assert!(matches!(CommGraph::build(0, &[]), Err(TopologyError::Empty)));
    }

    #[test]
    fn rejects_disconnected() {
        let err = CommGraph::build(4, &[(1, 2), (3, 4)]).unwrap_err();
        assert_eq!(err, TopologyError::DisconnectedGraph { components: 2 });
    }

    #[test]
    fn induced_connectivity() {
        let path = CommGraph::build(3, &[(1, 2), (2, 3)]).unwrap();
        assert!(!path.is_connected_among(&[true, false, true]));
        assert!(path.is_connected_among(&[true, true, false]));
        let ring = CommGraph::ring(6).unwrap();
        assert!(ring.is_connected_among(&[true, true, true, false, true, true]));
    }

    fn random_connected() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..=12).prop_flat_map(|n| {
            // spanning tree from parent choices + extra random edges
            let parents = proptest::collection::vec(any::<proptest::sample::Index>(), n.saturating_sub(1));
            let extra = proptest::collection::vec((0..n, 0..n), 0..(2 * n));
            (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
                let mut set = BTreeSet::new();
                for (k, p) in parents.iter().enumerate() {
                    let child = k + 1;
                    let parent = p.index(child);
                    set.insert((parent.min(child), parent.max(child)));
                }
                for (a, b) in extra {
                    if a != b {
                        set.insert((a.min(b), a.max(b)));
                    }
                }
                (n, set.into_iter().collect())
            })
        })
    }

    proptest! {
        #[test]
        fn laplacian_structure((n, edges) in random_connected()) {
            let g = CommGraph::from_zero_based(n, &edges).unwrap();
            let l = g.laplacian();
            for i in 0..n {
                let row_sum: f64 = (0..n).map(|j| l[(i, j)]).sum();
                prop_assert_eq!(row_sum, 0.0);
                prop_assert_eq!(l[(i, i)], g.degree(i) as f64);
                for j in 0..n {
                    prop_assert_eq!(l[(i, j)], l[(j, i)]);
                    if i != j {
                        prop_assert!(l[(i, j)] == 0.0 || l[(i, j)] == -1.0);
                    }
                }
            }
            let mut sq = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    sq[(i, j)] = (0..n).map(|k| l[(i, k)] * l[(k, j)]).sum::<f64>();
                }
            }
            prop_assert!((&sq - g.laplacian_sq()).abs().max() <= 1e-12);
            for i in 0..n {
                prop_assert_eq!(g.two_hop(i).to_vec(), bfs_two_hop(&g, i));
                for j in 0..n {
                    if g.laplacian_sq()[(i, j)] != 0.0 {
                        prop_assert!(i == j || g.contains_edge(i, j) || g.two_hop(i).contains(&j));
                    }
                }
            }
            let s = g.sigma_max();
            if n > 1 {
                prop_assert!(s > 0.0);
                // λ₂ > 0 for a connected graph
                let eig = SymmetricEigen::new(l.clone()).eigenvalues;
                let mut ev: Vec<f64> = eig.iter().copied().collect();
                ev.sort_by(f64::total_cmp);
                prop_assert!(ev[1] > 1e-9);
            }
            prop_assert!(s <= 2.0 * g.max_degree() as f64 + 1e-12);
            prop_assert!((s - power_iteration(l)).abs() <= 1e-8 * s.max(1.0));
        }
    }
}
