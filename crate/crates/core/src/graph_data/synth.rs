use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Adjacency, Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of the stochastic-block-model generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticGraphSpec {
    pub nodes_per_class: usize,
    pub num_classes: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticGraphSpec {
    fn default() -> Self {
        Self {
            nodes_per_class: 1500,
            num_classes: 2,
            intra_edge_prob: 0.0067,
            inter_edge_prob: 0.0013,
            feature_dim: 16,
            feature_noise: 1.25,
            seed: 0,
        }
    }
}

impl SyntheticGraphSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = 0.0..=1.0;
        if !prob.contains(&self.intra_edge_prob) || !prob.contains(&self.inter_edge_prob) {
            return Err(Error::invalid("edge probabilities must lie in [0, 1]"));
        }
        if self.intra_edge_prob <= self.inter_edge_prob {
            return Err(Error::invalid(
                "intra_edge_prob must exceed inter_edge_prob (homophily)",
            ));
        }
        if self.num_classes < 1 || self.nodes_per_class < 1 {
            return Err(Error::invalid("need at least one class and one node per class"));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::invalid("feature_dim must be >= num_classes"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::invalid("feature_noise must be nonnegative"));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_class * self.num_classes
    }
}

/// Sample a homophilous SBM graph with class-correlated Gaussian features.
///
/// Node `v` belongs to class `v / nodes_per_class`. Its feature row is the
/// one-hot class indicator plus isotropic noise of standard deviation
/// `feature_noise`.
pub fn generate_synthetic(spec: &SyntheticGraphSpec) -> Result<GraphDataset> {
    spec.validate()?;
    let n = spec.node_count();
    let labels: Vec<usize> = (0..n).map(|v| v / spec.nodes_per_class).collect();

    let mut edge_rng = seed::rng(seed::derive_seed(spec.seed, "synthetic/edges"));
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                spec.intra_edge_prob
            } else {
                spec.inter_edge_prob
            };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let adjacency = Adjacency::from_edges(n, edges)?;

    let mut feat_rng = seed::rng(seed::derive_seed(spec.seed, "synthetic/features"));
    let mut features = Array2::zeros((n, spec.feature_dim));
    for (v, mut row) in features.outer_iter_mut().enumerate() {
        for x in row.iter_mut() {
            let z: f64 = feat_rng.sample(StandardNormal);
            *x = spec.feature_noise * z;
        }
        row[labels[v]] += 1.0;
    }

    GraphDataset::new(Graph::new(adjacency, features)?, labels, spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks() -> SyntheticGraphSpec {
        SyntheticGraphSpec {
            nodes_per_class: 50,
            num_classes: 2,
            intra_edge_prob: 0.2,
            inter_edge_prob: 0.01,
            feature_dim: 8,
            feature_noise: 0.5,
            seed: 3,
        }
    }

    #[test]
    fn intra_density_matches_binomial_expectation() {
        let spec = two_blocks();
        let ds = generate_synthetic(&spec).unwrap();
        let labels = ds.labels();
        let intra = ds
            .adjacency()
            .edges()
            .filter(|&(u, v)| labels[u] == labels[v])
            .count();
        // two classes of 50 nodes: 2 * C(50, 2) candidate pairs
        let pairs = 2 * 50 * 49 / 2;
        let density = intra as f64 / pairs as f64;
        assert!((density - 0.2).abs() <= 0.05, "density {density}");
    }

    #[test]
    fn zero_noise_gives_identical_class_rows() {
        let spec = SyntheticGraphSpec {
            feature_noise: 0.0,
            ..two_blocks()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let x = ds.features();
        for v in 0..ds.node_count() {
            let first = if ds.labels()[v] == 0 { 0 } else { 50 };
            assert_eq!(x.row(v), x.row(first));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&two_blocks()).unwrap();
        let b = generate_synthetic(&two_blocks()).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn default_spec_is_homophilous() {
        let ds = generate_synthetic(&SyntheticGraphSpec::default()).unwrap();
        let labels = ds.labels();
        let total = ds.adjacency().edge_count();
        let same = ds
            .adjacency()
            .edges()
            .filter(|&(u, v)| labels[u] == labels[v])
            .count();
        assert!(same as f64 / total as f64 > 0.8);
        assert!(ds.node_count() >= 2000);
    }

    #[test]
    fn rejects_heterophilous_spec() {
        let spec = SyntheticGraphSpec {
            intra_edge_prob: 0.01,
            inter_edge_prob: 0.2,
            ..two_blocks()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
