//! Graph container, adjacency operators and file formats.

mod io;
mod sparse;

pub use io::{load_graph, read_bundle, save_graph, write_bundle, Bundle, GraphFiles};
pub use sparse::SparseMatrix;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{what} index {index} out of range for {n} nodes")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        n: usize,
    },
    #[error("inconsistent node count: {0}")]
    Inconsistent(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Named node index sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_id: Vec<usize>,
    pub test_ood: Vec<usize>,
    /// Auxiliary OOD nodes available for exposure training.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exposure: Vec<usize>,
}

impl Splits {
    fn named(&self) -> [(&'static str, &Vec<usize>); 5] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test_id", &self.test_id),
            ("test_ood", &self.test_ood),
            ("exposure", &self.exposure),
        ]
    }
}

/// Undirected attributed graph with labels and split masks.
///
/// Neighbour lists are sorted, duplicate-free, symmetric and contain no
/// self-loops. Features are dense `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Tensor,
    neighbors: Vec<Vec<usize>>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    splits: Splits,
}

impl Graph {
    /// Builds and validates a graph. Edges are symmetrized and deduplicated;
    /// self-loops are dropped.
    pub fn new(
        features: Tensor,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        if labels.len() != n {
            return Err(GraphError::Inconsistent(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(GraphError::Invalid("non-finite feature value".into()));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for (u, v) in edges {
            for endpoint in [u, v] {
                if endpoint >= n {
                    return Err(GraphError::IndexOutOfRange {
                        what: "edge endpoint",
                        index: endpoint,
                        n,
                    });
                }
            }
            if u != v {
                sets[u].insert(v);
                sets[v].insert(u);
            }
        }
        let neighbors = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let graph = Self {
            features,
            neighbors,
            labels,
            num_classes,
            splits,
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let n = self.n();
        if let Some((i, c)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= self.num_classes).map(|c| (i, c)))
        {
            return Err(GraphError::Invalid(format!(
                "node {i} has label {c} but there are {} classes",
                self.num_classes
            )));
        }
        let named = self.splits.named();
        let mut owner: Vec<Option<&'static str>> = vec![None; n];
        for (name, set) in named {
            for &i in set {
                if i >= n {
                    return Err(GraphError::IndexOutOfRange {
                        what: "split",
                        index: i,
                        n,
                    });
                }
                if let Some(prev) = owner[i] {
                    return Err(GraphError::Invalid(format!(
                        "node {i} appears in both {prev} and {name}"
                    )));
                }
                owner[i] = Some(name);
            }
        }
        for (name, set) in &named[..3] {
            if let Some(&i) = set.iter().find(|&&i| self.labels[i].is_none()) {
                return Err(GraphError::Invalid(format!("{name} node {i} has no label")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Labels of `index`; panics on unlabeled nodes, which validation
    /// excludes from the labeled splits.
    pub fn labels_of(&self, index: &[usize]) -> Vec<usize> {
        index
            .iter()
            .map(|&i| self.labels[i].expect("labeled split node"))
            .collect()
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self, GraphError> {
        if features.shape() != self.features.shape() {
            return Err(GraphError::Inconsistent(format!(
                "replacement features {:?} vs {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        Self::new(
            features,
            self.edges(),
            self.labels.clone(),
            self.num_classes,
            self.splits.clone(),
        )
    }

    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        Self::new(
            self.features.clone(),
            edges,
            self.labels.clone(),
            self.num_classes,
            self.splits.clone(),
        )
    }

    pub fn with_splits(&self, splits: Splits) -> Result<Self, GraphError> {
        let mut g = self.clone();
        g.splits = splits;
        g.validate()?;
        Ok(g)
    }

    pub fn with_labels(
        &self,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self, GraphError> {
        Self::new(
            self.features.clone(),
            self.edges(),
            labels,
            num_classes,
            splits,
        )
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    pub fn sym_normalized_adjacency(&self) -> SparseMatrix {
        let inv_sqrt: Vec<f64> = (0..self.n())
            .map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt())
            .collect();
        let mut triplets = Vec::with_capacity(self.n() + 2 * self.num_edges());
        for u in 0..self.n() {
            triplets.push((u, u, inv_sqrt[u] * inv_sqrt[u]));
            for &v in &self.neighbors[u] {
                triplets.push((u, v, inv_sqrt[u] * inv_sqrt[v]));
            }
        }
        SparseMatrix::from_triplets(self.n(), triplets).expect("valid by construction")
    }

    /// `D^{-1} A` without self-loops; isolated nodes get an empty row.
    pub fn row_stochastic_adjacency(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(2 * self.num_edges());
        for u in 0..self.n() {
            let w = 1.0 / self.degree(u).max(1) as f64;
            for &v in &self.neighbors[u] {
                triplets.push((u, v, w));
            }
        }
        SparseMatrix::from_triplets(self.n(), triplets).expect("valid by construction")
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.n();
        if perm.len() != n || perm.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(GraphError::Invalid("not a permutation".into()));
        }
        let mut features = Tensor::zeros(n, self.dim());
        let mut labels = vec![None; n];
        for i in 0..n {
            features
                .row_mut(perm[i])
                .copy_from_slice(self.features.row(i));
            labels[perm[i]] = self.labels[i];
        }
        let map = |s: &[usize]| s.iter().map(|&i| perm[i]).collect::<Vec<_>>();
        let splits = Splits {
            train: map(&self.splits.train),
            val: map(&self.splits.val),
            test_id: map(&self.splits.test_id),
            test_ood: map(&self.splits.test_ood),
            exposure: map(&self.splits.exposure),
        };
        let edges = self.edges().into_iter().map(|(u, v)| (perm[u], perm[v]));
        Self::new(features, edges, labels, self.num_classes, splits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(
            Tensor::zeros(n, 1),
            edges.iter().copied(),
            vec![Some(0); n],
            1,
            Splits::default(),
        )
        .unwrap()
    }

    #[test]
    fn two_connected_nodes_normalize_to_half() {
        let a = graph(2, &[(0, 1)]).sym_normalized_adjacency();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((a.get(i, j) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let a = graph(1, &[]).sym_normalized_adjacency();
        assert_eq!(a.to_dense().data(), &[1.0]);
    }

    #[test]
    fn path_graph_entry() {
        let a = graph(3, &[(0, 1), (1, 2)]).sym_normalized_adjacency();
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(0, 1) - 0.40825).abs() < 1e-5);
        assert_eq!(a.get(0, 2), 0.0);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn row_stochastic_rows() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3)]);
        let p = g.row_stochastic_adjacency();
        for j in 1..=3 {
            assert!((p.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((p.row_sum(0) - 1.0).abs() < 1e-15);
        assert_eq!(p.row(4).count(), 0);
        let q = graph(3, &[(0, 1), (0, 2)]).row_stochastic_adjacency();
        assert_eq!((q.get(0, 1), q.get(0, 2)), (0.5, 0.5));
    }

    #[test]
    fn edges_are_symmetrized_and_deduplicated() {
        let g = graph(3, &[(0, 1), (1, 0), (1, 1), (2, 1)]);
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        assert!(g.has_edge(1, 0) && g.has_edge(0, 1));
    }

    #[test]
    fn out_of_range_endpoint_rejected() {
        let err = Graph::new(
            Tensor::zeros(2, 1),
            [(0, 5)],
            vec![Some(0), Some(1)],
            2,
            Splits::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::IndexOutOfRange { index: 5, .. }));
    }

    #[test]
    fn overlapping_train_and_ood_rejected() {
        let splits = Splits {
            train: vec![0],
            test_ood: vec![0],
            ..Default::default()
        };
        let err = Graph::new(Tensor::zeros(2, 1), [], vec![Some(0); 2], 1, splits).unwrap_err();
        assert!(err.to_string().contains("train"));
    }

    #[test]
    fn label_beyond_class_count_rejected() {
        let err = Graph::new(
            Tensor::zeros(2, 1),
            [],
            vec![Some(0), Some(3)],
            2,
            Splits::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Invalid(_)));
    }
}
