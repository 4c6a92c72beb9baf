//! Graph datasets: adjacency, node features and labels, plus splitting,
//! synthetic generation and feature-space kNN structure estimation.

mod io;
mod knn;
mod split;
mod synth;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset};
pub use knn::knn_graph;
pub use split::{split_dataset, DataSplit, DEFAULT_FRACTIONS};
pub use synth::{generate_synthetic, SyntheticGraphSpec};

/// Undirected binary adjacency stored as sorted neighbor lists.
///
/// Always symmetric, never contains self-loops or duplicate entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn empty(node_count: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); node_count],
        }
    }

    /// Build from an (unordered) edge list. Edges are symmetrized, self-loops
    /// and duplicates are dropped.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut neighbors = vec![Vec::new(); node_count];
        for (u, v) in edges {
            for id in [u, v] {
                if id >= node_count {
                    return Err(Error::UnknownNode { id, node_count });
                }
            }
            if u == v {
                continue;
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .all(|(u, list)| list.iter().all(|&v| v != u && self.has_edge(v, u)))
    }

    /// Subgraph induced on `nodes`; node `nodes[i]` becomes node `i`.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.node_count()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let neighbors = nodes
            .iter()
            .map(|&v| {
                let mut list: Vec<usize> = self.neighbors[v]
                    .iter()
                    .filter_map(|&u| (local[u] != usize::MAX).then_some(local[u]))
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        Self { neighbors }
    }
}

/// Graph structure plus node features; what a model consumes at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adjacency: Adjacency,
    pub features: Array2<f64>,
}

impl Graph {
    pub fn new(adjacency: Adjacency, features: Array2<f64>) -> Result<Self> {
        if adjacency.node_count() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "adjacency has {} nodes, features have {} rows",
                adjacency.node_count(),
                features.nrows()
            )));
        }
        Ok(Self {
            adjacency,
            features,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn induced(&self, nodes: &[usize]) -> Self {
        let features = self.features.select(ndarray::Axis(0), nodes);
        Self {
            adjacency: self.adjacency.induced(nodes),
            features,
        }
    }
}

/// A labelled graph dataset `(A, X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    graph: Graph,
    labels: Vec<usize>,
    num_classes: usize,
}

impl GraphDataset {
    pub fn new(graph: Graph, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != graph.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                graph.node_count()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            graph,
            labels,
            num_classes,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.graph.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.graph.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.graph.feature_dim()
    }

    /// Dataset induced on `nodes` (relabelled `0..nodes.len()`), keeping the
    /// global class count.
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        check_nodes(nodes, self.node_count())?;
        Ok(Self {
            graph: self.graph.induced(nodes),
            labels: nodes.iter().map(|&v| self.labels[v]).collect(),
            num_classes: self.num_classes,
        })
    }

    /// Same dataset with a different structure (used for kNN-estimated graphs).
    pub fn with_adjacency(&self, adjacency: Adjacency) -> Result<Self> {
        Self::new(
            Graph::new(adjacency, self.graph.features.clone())?,
            self.labels.clone(),
            self.num_classes,
        )
    }
}

/// Validate that every id in `nodes` is in range and appears once.
pub fn check_nodes(nodes: &[usize], node_count: usize) -> Result<()> {
    let mut seen = vec![false; node_count];
    for &v in nodes {
        if v >= node_count {
            return Err(Error::UnknownNode { id: v, node_count });
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::invalid(format!("node {v} listed twice")));
        }
    }
    Ok(())
}

/// Hex SHA-256 over a sorted node-id set; recorded with disputes and verdicts.
pub fn node_set_hash(nodes: &[usize]) -> String {
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    for v in sorted {
        hasher.update((v as u64).to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
