use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::distance_matrix;
use crate::error::{Error, Result};
use crate::gnn::{prune, GnnModel};
use crate::graph_data::{check_nodes, Graph};
use crate::nn::Mat;

/// Largest prune ratio used when augmenting a training set.
pub const MAX_ROBUST_PRUNE_RATIO: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OtherKind {
    Surrogate,
    Independent,
    PrunedSurrogate,
}

impl OtherKind {
    pub fn name(self) -> &'static str {
        match self {
            OtherKind::Surrogate => "surrogate",
            OtherKind::Independent => "independent",
            OtherKind::PrunedSurrogate => "pruned-surrogate",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(OtherKind::Surrogate),
            "independent" => Ok(OtherKind::Independent),
            "pruned-surrogate" => Ok(OtherKind::PrunedSurrogate),
            other => Err(Error::parse("training set", format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub target_id: String,
    pub other_id: String,
    pub node: usize,
    pub kind: OtherKind,
}

/// Labelled distance vectors. Row `i` of `rows` has label `labels[i]`
/// (`true` = similar) and origin `provenance[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintTrainingSet {
    pub rows: Mat,
    pub labels: Vec<bool>,
    pub provenance: Vec<Provenance>,
}

/// A model with an identifier for provenance.
#[derive(Debug, Clone, Copy)]
pub struct NamedModel<'a> {
    pub id: &'a str,
    pub model: &'a GnnModel,
}

impl<'a> NamedModel<'a> {
    pub fn new(id: &'a str, model: &'a GnnModel) -> Self {
        Self { id, model }
    }
}

impl FingerprintTrainingSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            rows: Array2::zeros((0, dim)),
            labels: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Append all rows of `other`.
    pub fn extend(&mut self, other: FingerprintTrainingSet) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        self.rows = concatenate(Axis(0), &[self.rows.view(), other.rows.view()]).expect("same width");
        self.labels.extend(other.labels);
        self.provenance.extend(other.provenance);
        Ok(())
    }

    fn push_pairs(&mut self, target_id: &str, other_id: &str, kind: OtherKind, d: Mat, d_v: &[usize]) -> Result<()> {
        let label = kind != OtherKind::Independent;
        let n = d.nrows();
        self.extend(FingerprintTrainingSet {
            rows: d,
            labels: vec![label; n],
            provenance: d_v
                .iter()
                .map(|&node| Provenance {
                    target_id: target_id.to_string(),
                    other_id: other_id.to_string(),
                    node,
                    kind,
                })
                .collect(),
        })
    }

    /// Columnar CSV: `d0..d{k-1},label,target_id,other_id,node,kind`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim() {
            write!(out, "d{j},").unwrap();
        }
        out.push_str("label,target_id,other_id,node,kind\n");
        for ((row, &label), p) in self.rows.outer_iter().zip(&self.labels).zip(&self.provenance) {
            for v in row {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{},{},{},{},{}", label as u8, p.target_id, p.other_id, p.node, p.kind.name()).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Empty("training set CSV".into()))?;
        let dim = header.split(',').filter(|c| c.starts_with('d') && c[1..].parse::<usize>().is_ok()).count();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut provenance = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ctx = || format!("training set line {}", i + 2);
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != dim + 5 {
                return Err(Error::parse(ctx(), format!("expected {} columns", dim + 5)));
            }
            for c in &cols[..dim] {
                values.push(c.parse::<f64>().map_err(|e| Error::parse(ctx(), e))?);
            }
            labels.push(match cols[dim] {
                "1" => true,
                "0" => false,
                other => return Err(Error::parse(ctx(), format!("bad label {other:?}"))),
            });
            provenance.push(Provenance {
                target_id: cols[dim + 1].to_string(),
                other_id: cols[dim + 2].to_string(),
                node: cols[dim + 3].parse().map_err(|e| Error::parse(ctx(), e))?,
                kind: OtherKind::parse(cols[dim + 4])?,
            });
        }
        let rows = Array2::from_shape_vec((labels.len(), dim), values).expect("rectangular");
        Ok(Self { rows, labels, provenance })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_csv())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

/// `|d_v|` positive rows per surrogate and `|d_v|` negative rows per
/// independent model, each row the distance vector between the target's and
/// the other model's embedding of one node.
pub fn build_training_set(
    target: NamedModel,
    surrogates: &[NamedModel],
    independents: &[NamedModel],
    graph: &Graph,
    d_v: &[usize],
    seed: u64,
) -> Result<FingerprintTrainingSet> {
    if surrogates.is_empty() || independents.is_empty() {
        return Err(Error::Empty("surrogate and independent model lists must be nonempty".into()));
    }
    if d_v.is_empty() {
        return Err(Error::Empty("verification node set".into()));
    }
    check_nodes(d_v, graph.node_count())?;
    let ht = target.model.embed(graph, d_v, seed)?;
    let mut ts = FingerprintTrainingSet::empty(ht.ncols());
    let groups = [(surrogates, OtherKind::Surrogate), (independents, OtherKind::Independent)];
    for (models, kind) in groups {
        for other in models {
            let h = other.model.embed(graph, d_v, seed)?;
            ts.push_pairs(target.id, other.id, kind, distance_matrix(&ht, &h)?, d_v)?;
        }
    }
    Ok(ts)
}

/// `base` plus positive rows from every surrogate pruned at every ratio.
pub fn build_robust_training_set(
    base: &FingerprintTrainingSet,
    target: NamedModel,
    surrogates: &[NamedModel],
    prune_ratios: &[f64],
    graph: &Graph,
    d_v: &[usize],
    seed: u64,
) -> Result<FingerprintTrainingSet> {
    if let Some(&r) = prune_ratios.iter().find(|&&r| !(r > 0.0 && r <= MAX_ROBUST_PRUNE_RATIO)) {
        return Err(Error::invalid(format!(
            "robust prune ratios must lie in (0, {MAX_ROBUST_PRUNE_RATIO}], got {r}"
        )));
    }
    let mut ts = base.clone();
    if prune_ratios.is_empty() {
        return Ok(ts);
    }
    let ht = target.model.embed(graph, d_v, seed)?;
    for other in surrogates {
        for &r in prune_ratios {
            let pruned = prune(other.model, r)?;
            let h = pruned.embed(graph, d_v, seed)?;
            let id = format!("{}@prune{r}", other.id);
            ts.push_pairs(target.id, &id, OtherKind::PrunedSurrogate, distance_matrix(&ht, &h)?, d_v)?;
        }
    }
    Ok(ts)
}
