//! Distance-vector fingerprints and the similarity classifier that turns
//! them into surrogate/independent verdicts.

mod csim;
mod dataset;

use serde::{Deserialize, Serialize};

pub use csim::{train_csim, CsimConfig, GridResult, SimilarityClassifier};
pub use dataset::{
    build_robust_training_set, build_training_set, FingerprintTrainingSet, NamedModel, OtherKind, Provenance,
    MAX_ROBUST_PRUNE_RATIO,
};

use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph_data::{node_set_hash, Graph};
use crate::nn::Mat;

/// Element-wise squared difference of two embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceVector {
    pub values: Vec<f64>,
    /// `Some(true)` for a similar (surrogate) pair.
    pub label: Option<bool>,
}

pub fn distance_vector(a: &[f64], b: &[f64]) -> Result<DistanceVector> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let values = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok(DistanceVector { values, label: None })
}

/// Row-wise distance vectors of two embedding matrices.
pub fn distance_matrix(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!("{} vs {} embedding rows", a.nrows(), b.nrows())));
    }
    Ok((a - b).mapv(|d| d * d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Surrogate,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub similar_fraction: f64,
    pub verdict: Verdict,
    pub pair_count: usize,
    pub per_node_decisions: Vec<bool>,
}

impl VerdictReport {
    pub fn from_decisions(per_node_decisions: Vec<bool>) -> Self {
        let pair_count = per_node_decisions.len();
        let similar = per_node_decisions.iter().filter(|&&d| d).count();
        let similar_fraction = if pair_count == 0 { 0.0 } else { similar as f64 / pair_count as f64 };
        let verdict = if similar_fraction > 0.5 { Verdict::Surrogate } else { Verdict::Independent };
        Self {
            similar_fraction,
            verdict,
            pair_count,
            per_node_decisions,
        }
    }
}

/// Verdict together with what it was computed from, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub target_commitment: String,
    pub suspect_commitment: String,
    pub verification_set_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: VerdictReport,
}

impl VerdictRecord {
    pub fn new(report: VerdictReport, target: &GnnModel, suspect: &GnnModel, d_v: &[usize], seed: u64) -> Self {
        Self {
            target_commitment: crate::registry::commitment(&target.to_bytes()),
            suspect_commitment: crate::registry::commitment(&suspect.to_bytes()),
            verification_set_hash: node_set_hash(d_v),
            seed,
            report,
        }
    }
}

/// Classify every `(target, suspect)` embedding pair on `d_v` and apply the
/// majority rule.
pub fn verify(
    csim: &SimilarityClassifier,
    target: &GnnModel,
    suspect: &GnnModel,
    graph: &Graph,
    d_v: &[usize],
    seed: u64,
) -> Result<VerdictReport> {
    let ht = target.embed(graph, d_v, seed)?;
    let hs = suspect.embed(graph, d_v, seed)?;
    verify_embeddings(csim, &ht, &hs)
}

/// [`verify`] on precomputed embeddings.
pub fn verify_embeddings(csim: &SimilarityClassifier, ht: &Mat, hs: &Mat) -> Result<VerdictReport> {
    let d = distance_matrix(ht, hs)?;
    let decisions = csim.predict(&d)?;
    Ok(VerdictReport::from_decisions(decisions))
}
