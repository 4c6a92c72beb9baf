//! Black-box query access to a deployed model's embeddings.
//!
//! HTTP wire format (`POST <base>/models/<id>/embed`, JSON both ways):
//!
//! Request:
//! - `features`: array of node feature rows, one array of numbers per node
//! - `edges`: array of `[u, v]` node index pairs; treated as undirected
//! - `seed`: unsigned integer keying neighbor sampling
//!
//! Response:
//! - `embeddings`: array of embedding rows, one per requested node, in order

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph_data::{Adjacency, Graph};
use crate::nn::Mat;

/// Something that answers embedding queries for a whole graph.
pub trait QueryOracle: Send + Sync {
    /// Embeddings for every node of `graph`, row `i` for node `i`.
    fn query(&self, graph: &Graph, seed: u64) -> Result<Mat>;
}

/// Oracle over an in-process model.
#[derive(Debug, Clone)]
pub struct LocalOracle {
    model: Arc<GnnModel>,
}

impl LocalOracle {
    pub fn new(model: GnnModel) -> Self {
        Self { model: Arc::new(model) }
    }

    pub fn shared(model: Arc<GnnModel>) -> Self {
        Self { model }
    }
}

impl QueryOracle for LocalOracle {
    fn query(&self, graph: &Graph, seed: u64) -> Result<Mat> {
        self.model.embed_all(graph, seed)
    }
}

impl<T: QueryOracle + ?Sized> QueryOracle for &T {
    fn query(&self, graph: &Graph, seed: u64) -> Result<Mat> {
        (**self).query(graph, seed)
    }
}

impl<T: QueryOracle + ?Sized> QueryOracle for Box<T> {
    fn query(&self, graph: &Graph, seed: u64) -> Result<Mat> {
        (**self).query(graph, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

impl EmbedRequest {
    pub fn from_graph(graph: &Graph, seed: u64) -> Self {
        Self {
            features: rows(&graph.features),
            edges: graph.adjacency.edges().map(|(u, v)| [u, v]).collect(),
            seed,
        }
    }

    pub fn to_graph(&self) -> Result<Graph> {
        let features = matrix(&self.features, "features")?;
        let adjacency =
            Adjacency::from_edges(features.nrows(), self.edges.iter().map(|&[u, v]| (u, v)))?;
        Graph::new(adjacency, features)
    }
}

pub(crate) fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::ShapeMismatch(format!("ragged {what} rows")));
    }
    Ok(Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rectangular"))
}

/// Oracle that posts queries to an embedding endpoint.
#[derive(Debug, Clone)]
pub struct HttpOracle {
    url: String,
}

impl HttpOracle {
    /// `url` is the full endpoint, e.g. `http://127.0.0.1:8080/models/m1/embed`.
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }
}

impl QueryOracle for HttpOracle {
    fn query(&self, graph: &Graph, seed: u64) -> Result<Mat> {
        let request = EmbedRequest::from_graph(graph, seed);
        let response: EmbedResponse = ureq::post(&self.url)
            .send_json(&request)
            .map_err(|e| Error::Oracle(format!("{}: {e}", self.url)))?
            .into_body()
            .with_config()
            .limit(u64::MAX)
            .read_json()
            .map_err(|e| Error::Oracle(format!("{}: {e}", self.url)))?;
        let embeddings = matrix(&response.embeddings, "embedding")?;
        if embeddings.nrows() != graph.node_count() {
            return Err(Error::Oracle(format!(
                "expected {} embedding rows, got {}",
                graph.node_count(),
                embeddings.nrows()
            )));
        }
        Ok(embeddings)
    }
}
