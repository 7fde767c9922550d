//! Undirected graphs and their normalized Laplacian.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::sparse::SparseMatrix;

/// Immutable undirected simple graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    /// Canonical `(u, v)` pairs with `u < v`, sorted.
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Symmetrizes, drops self-loops and duplicate edges.
    pub fn build(edge_list: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(u, v) in edge_list {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::NodeOutOfRange { node, num_nodes });
                }
            }
            if u != v {
                edges.push((u.min(v), u.max(v)));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut adj = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            num_nodes,
            edges,
            offsets,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }
}

/// `Â = I − D^{-1/2} A D^{-1/2}`, stored sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    matrix: SparseMatrix,
}

impl PropagationMatrix {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn to_dense(&self) -> Matrix {
        self.matrix.to_dense()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Normalized Laplacian. Isolated nodes take `D^{-1/2} = 0`, leaving a unit
/// diagonal entry.
pub fn normalized_laplacian(g: &Graph) -> PropagationMatrix {
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let rows = (0..g.num_nodes())
        .map(|i| {
            let mut row = Vec::with_capacity(g.degree(i) + 1);
            row.push((i, 1.0));
            for &j in g.neighbors(i) {
                row.push((j, -inv_sqrt[i] * inv_sqrt[j]));
            }
            row
        })
        .collect();
    PropagationMatrix {
        matrix: SparseMatrix::from_rows(g.num_nodes(), rows).expect("neighbors in range"),
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`, the low-pass propagation of a conventional
/// GCN. Only the dense baseline uses it.
pub fn renormalized_adjacency(g: &Graph) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = g.degrees().into_iter().map(|d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let rows = (0..g.num_nodes())
        .map(|i| {
            let mut row = vec![(i, inv_sqrt[i] * inv_sqrt[i])];
            for &j in g.neighbors(i) {
                row.push((j, inv_sqrt[i] * inv_sqrt[j]));
            }
            row
        })
        .collect();
    SparseMatrix::from_rows(g.num_nodes(), rows).expect("neighbors in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff, sym_eigendecompose, Purpose, RngStream};
    use proptest::prelude::*;

    #[test]
    fn single_edge_degrees() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let g = Graph::build(&[(0, 1), (1, 0)], 2).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn path_degrees() {
        let g = Graph::build(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert!(g.has_edge(2, 1));
    }

    #[test]
    fn self_loops_dropped() {
        let g = Graph::build(&[(0, 0), (0, 1)], 2).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(Graph::build(&[], 0), Err(Error::EmptyGraph)));
        assert!(matches!(
            Graph::build(&[(0, 5)], 3),
            Err(Error::NodeOutOfRange { node: 5, num_nodes: 3 })
        ));
    }

    #[test]
    fn single_edge_laplacian() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        let l = normalized_laplacian(&g).to_dense();
        assert_eq!(l, Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn isolated_node_keeps_unit_row() {
        let g = Graph::build(&[(0, 1)], 3).unwrap();
        let l = normalized_laplacian(&g).to_dense();
        assert_eq!(l.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn triangle_spectrum() {
        let g = Graph::build(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        let l = normalized_laplacian(&g).to_dense();
        let expect = Matrix::identity(3, 3) - Matrix::from_element(3, 3, 0.5) + Matrix::identity(3, 3) * 0.5;
        assert!(max_abs_diff(&l, &expect) < 1e-15);
        let eig = sym_eigendecompose(&l).unwrap();
        for (got, want) in eig.eigenvalues.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    fn random_graph(seed: u64, n: usize, p: f64) -> Graph {
        let mut rng = RngStream::new(seed, Purpose::Data);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.uniform() < p {
                    edges.push((u, v));
                }
            }
        }
        Graph::build(&edges, n).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn laplacian_symmetric_bounded_trace_n(seed in any::<u64>(), n in 1usize..96, p in 0.0f64..0.3) {
            let g = random_graph(seed, n, p);
            let l = normalized_laplacian(&g).to_dense();
            prop_assert_eq!(&l, &l.transpose());
            prop_assert!((l.trace() - n as f64).abs() < 1e-12);
            let eig = sym_eigendecompose(&l).unwrap();
            prop_assert!(eig.eigenvalues[0] >= -1e-10);
            prop_assert!(*eig.eigenvalues.last().unwrap() <= 2.0 + 1e-10);
            let sum: f64 = eig.eigenvalues.iter().sum();
            prop_assert!((sum - n as f64).abs() < 1e-8 * n as f64);
            for (i, d) in g.degrees().into_iter().enumerate() {
                prop_assert_eq!(g.neighbors(i).len(), d);
            }
        }
    }

    #[test]
    fn laplacian_spectrum_bounded_at_256() {
        let g = random_graph(99, 256, 0.05);
        let eig = sym_eigendecompose(&normalized_laplacian(&g).to_dense()).unwrap();
        assert!(eig.eigenvalues[0] >= -1e-10);
        assert!(*eig.eigenvalues.last().unwrap() <= 2.0 + 1e-10);
    }
}
