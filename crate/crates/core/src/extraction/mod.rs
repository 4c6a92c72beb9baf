//! Embedding-extraction attacks: train a surrogate whose embeddings match a
//! black-box target's, then fit a classifier head on ground-truth labels.

pub(crate) mod oracle;
mod shift;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use oracle::{EmbedRequest, EmbedResponse, HttpOracle, LocalOracle, QueryOracle};
pub use shift::{distribution_shift_attack, Discriminator, ShiftConfig};

use crate::error::{Error, Result};
use crate::gnn::{Architecture, GnnConfig, GnnModel};
use crate::graph_data::{knn_graph, Graph, GraphDataset};
use crate::nn::{argmax_rows, softmax_cross_entropy, Activation, Adam, Mat};
use crate::seed;

/// `(1/n) * sum_i ||hs_i - ht_i||_2`.
pub fn row_21_loss(hs: &Mat, ht: &Mat) -> Result<f64> {
    Ok(row_21_loss_and_grad(hs, ht)?.0)
}

/// Loss and its gradient with respect to `hs`. Rows that already match get a
/// zero gradient.
pub fn row_21_loss_and_grad(hs: &Mat, ht: &Mat) -> Result<(f64, Mat)> {
    if hs.dim() != ht.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding matrices {:?} and {:?}",
            hs.dim(),
            ht.dim()
        )));
    }
    let n = hs.nrows();
    if n == 0 {
        return Err(Error::Empty("embedding matrix".into()));
    }
    let mut grad = hs - ht;
    let mut total = 0.0;
    for mut row in grad.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        total += norm;
        if norm > 0.0 {
            row /= norm * n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackType {
    /// The adversary knows the graph structure of its data.
    #[serde(rename = "type1")]
    TypeI,
    /// The adversary only has features and labels; structure is estimated
    /// with a kNN graph.
    #[serde(rename = "type2")]
    TypeII,
}

impl AttackType {
    pub const ALL: [AttackType; 2] = [AttackType::TypeI, AttackType::TypeII];

    pub fn name(self) -> &'static str {
        match self {
            AttackType::TypeI => "type1",
            AttackType::TypeII => "type2",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "type1" | "typei" | "1" | "i" => Ok(AttackType::TypeI),
            "type2" | "typeii" | "2" | "ii" => Ok(AttackType::TypeII),
            other => Err(Error::invalid(format!("unknown attack type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub attack_type: AttackType,
    pub knn_k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub surrogate_architecture: Architecture,
    /// Hidden width of the surrogate's classifier MLP; 0 gives a linear
    /// head.
    pub head_hidden: usize,
    pub batch_size: usize,
    /// Minibatch size of the classifier step, which runs on precomputed
    /// embeddings.
    pub head_batch_size: usize,
    /// Dropout of the surrogate's embedding network; `None` keeps the
    /// architecture default.
    pub dropout: Option<f64>,
    /// Number of oracle queries over the attack graph, each with its own
    /// sampling seed. Epoch `e` fits the answers of query `e % query_rounds`
    /// using the same neighbor samples the oracle drew.
    pub query_rounds: usize,
    /// Epochs without improvement on the held-out nodes before stopping; 0
    /// runs all epochs.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            attack_type: AttackType::TypeI,
            knn_k: 5,
            epochs: 200,
            learning_rate: 0.001,
            surrogate_architecture: Architecture::GraphSage,
            head_hidden: 0,
            batch_size: 128,
            head_batch_size: 256,
            dropout: Some(0.0),
            query_rounds: 4,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn new(attack_type: AttackType, surrogate_architecture: Architecture, seed: u64) -> Self {
        Self {
            attack_type,
            surrogate_architecture,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attack_type == AttackType::TypeII && self.knn_k == 0 {
            return Err(Error::invalid("Type II attacks need knn_k >= 1"));
        }
        if self.query_rounds == 0 {
            return Err(Error::invalid("attack needs at least one query round"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("attack needs at least one epoch"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.head_batch_size == 0 {
            return Err(Error::invalid("learning_rate and batch_size must be positive"));
        }
        Ok(())
    }

    fn head_widths(&self) -> Vec<usize> {
        if self.head_hidden == 0 { Vec::new() } else { vec![self.head_hidden] }
    }

    /// GNN config of the surrogate's embedding network.
    pub fn surrogate_config(&self, embedding_dim: usize) -> GnnConfig {
        let mut cfg = GnnConfig::new(self.surrogate_architecture)
            .with_hidden_dim(embedding_dim)
            .with_seed(seed::derive_seed(self.seed, "attack/surrogate"));
        cfg.learning_rate = self.learning_rate;
        cfg.max_epochs = self.epochs;
        cfg.batch_size = self.batch_size;
        if let Some(p) = self.dropout {
            cfg.dropout = p;
        }
        if cfg.architecture == Architecture::Gat && !embedding_dim.is_multiple_of(cfg.attention_heads) {
            cfg.attention_heads = 1;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    /// Embedding network plus MLP classifier head.
    pub model: GnnModel,
    pub attack_type: AttackType,
    /// Last epoch's mean embedding loss against the queried target outputs.
    pub embedding_loss: f64,
}

/// State of an extraction run. Each epoch is an embedding step followed by a
/// classifier step; each step only touches its own parameters.
pub struct Extraction {
    model: GnnModel,
    graph: Graph,
    labels: Vec<usize>,
    /// Oracle answers with the sampling seed each was computed under.
    queries: Vec<(u64, Mat)>,
    /// Nodes used for fitting; the rest are held out for early stopping.
    fit: Vec<usize>,
    val: Vec<usize>,
    cfg: AttackConfig,
    emb_adam: Adam,
    head_adam: Adam,
    epoch: usize,
    last_loss: f64,
}

/// The graph an attacker of the given type feeds to the target.
pub fn attack_graph(ds: &GraphDataset, cfg: &AttackConfig) -> Result<Graph> {
    match cfg.attack_type {
        AttackType::TypeI => Ok(ds.graph().clone()),
        AttackType::TypeII => {
            let adjacency = knn_graph(ds.features(), cfg.knn_k)?;
            Graph::new(adjacency, ds.features().clone())
        }
    }
}

impl Extraction {
    pub fn new(oracle: &dyn QueryOracle, ds: &GraphDataset, cfg: &AttackConfig) -> Result<Self> {
        cfg.validate()?;
        if ds.node_count() == 0 {
            return Err(Error::Empty("attack dataset".into()));
        }
        let graph = attack_graph(ds, cfg)?;
        let query_seed = seed::derive_seed(cfg.seed, "attack/query");
        let mut queries = Vec::with_capacity(cfg.query_rounds);
        for round in 0..cfg.query_rounds {
            let s = seed::mix3(query_seed, round as u64, 0);
            let answer = oracle.query(&graph, s)?;
            let expected = queries.first().map_or(answer.ncols(), |(_, m): &(u64, Mat)| m.ncols());
            if answer.nrows() != ds.node_count() || answer.ncols() == 0 || answer.ncols() != expected {
                return Err(Error::Oracle(format!(
                    "oracle returned {:?} for {} nodes",
                    answer.dim(),
                    ds.node_count()
                )));
            }
            queries.push((s, answer));
        }
        let target = &queries[0].1;
        let model = GnnModel::init_with_head(
            &cfg.surrogate_config(target.ncols()),
            ds.feature_dim(),
            ds.num_classes(),
            &cfg.head_widths(),
            Activation::Relu,
        )?;
        let mut order: Vec<usize> = (0..ds.node_count()).collect();
        order.shuffle(&mut seed::rng(seed::derive_seed(cfg.seed, "attack/validation")));
        let n_val = if order.len() >= 10 { order.len() / 10 } else { 0 };
        let val = order[..n_val].to_vec();
        let fit = order[n_val..].to_vec();
        let emb_adam = Adam::new(cfg.learning_rate, &model.embedding_params());
        let head_adam = Adam::new(cfg.learning_rate, &model.head.params());
        Ok(Self {
            model,
            graph,
            labels: ds.labels().to_vec(),
            queries,
            fit,
            val,
            cfg: cfg.clone(),
            emb_adam,
            head_adam,
            epoch: 0,
            last_loss: f64::NAN,
        })
    }

    pub fn model(&self) -> &GnnModel {
        &self.model
    }

    /// Embeddings returned by the target for the attack graph in the first
    /// query round.
    pub fn target_embeddings(&self) -> &Mat {
        &self.queries[0].1
    }

    /// Sampling seed and oracle answers for the current epoch.
    pub(crate) fn current_query(&self) -> &(u64, Mat) {
        &self.queries[self.epoch % self.queries.len()]
    }

    fn batches(&self, stream: &str, size: usize) -> (u64, Vec<Vec<usize>>) {
        let s = seed::mix3(seed::derive_seed(self.cfg.seed, stream), self.epoch as u64, 0);
        let mut order = self.fit.clone();
        order.shuffle(&mut seed::rng(s));
        let batches = order.chunks(size).map(<[usize]>::to_vec).collect();
        (s, batches)
    }

    /// One pass fitting the embedding network to the target's embeddings.
    /// Returns the mean batch loss.
    pub fn embedding_step(&mut self) -> Result<f64> {
        let (s, batches) = self.batches("attack/embedding", self.cfg.batch_size);
        let mut rng = seed::rng(s);
        let (query_seed, answers) = &self.queries[self.epoch % self.queries.len()];
        let mut total = 0.0;
        for batch in &batches {
            let (h, cache) = self.model.forward_cached(&self.graph, batch, *query_seed, Some(&mut rng))?;
            let target = answers.select(Axis(0), batch);
            let (loss, grad) = row_21_loss_and_grad(&h, &target)?;
            let grads = self.model.backward_embedding(&cache, &grad);
            self.emb_adam.step(self.model.embedding_params_mut(), &grads);
            total += loss;
        }
        self.last_loss = total / batches.len() as f64;
        Ok(self.last_loss)
    }

    /// One pass fitting the classifier head on frozen embeddings.
    pub fn classifier_step(&mut self) -> Result<f64> {
        let h = self.model.embed_all(&self.graph, self.current_query().0)?;
        let (_, batches) = self.batches("attack/classifier", self.cfg.head_batch_size);
        let mut total = 0.0;
        for batch in &batches {
            let x = h.select(ndarray::Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
            let (logits, cache) = self.model.head.forward_cached(&x);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y);
            let (grads, _) = self.model.head.backward(&cache, &dlogits);
            self.head_adam.step(self.model.head.params_mut(), &grads);
            total += loss;
        }
        Ok(total / batches.len() as f64)
    }

    /// Accuracy and embedding loss on the held-out nodes, if any were held
    /// out.
    pub fn validation(&self) -> Result<Option<(f64, f64)>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let (s, answers) = &self.queries[0];
        let (emb, logits) = self.model.forward(&self.graph, &self.val, *s)?;
        let hits = argmax_rows(&logits)
            .into_iter()
            .zip(&self.val)
            .filter(|(p, &v)| *p == self.labels[v])
            .count();
        let loss = row_21_loss(&emb, &answers.select(Axis(0), &self.val))?;
        Ok(Some((hits as f64 / self.val.len() as f64, loss)))
    }

    /// Move on to the next epoch's batch order and query round.
    pub fn advance(&mut self) {
        self.epoch += 1;
    }

    pub fn epoch(&mut self) -> Result<()> {
        self.embedding_step()?;
        self.classifier_step()?;
        self.advance();
        Ok(())
    }

    /// Run up to `cfg.epochs` epochs of `step`, keeping the parameters of the
    /// epoch with the best held-out accuracy, ties going to the lower
    /// held-out embedding loss.
    pub(crate) fn train_with_early_stopping(&mut self, mut step: impl FnMut(&mut Self) -> Result<()>) -> Result<()> {
        let mut best: Option<(f64, f64, GnnModel, f64)> = None;
        let mut stale = 0;
        for _ in 0..self.cfg.epochs {
            step(self)?;
            let Some((acc, loss)) = self.validation()? else { continue };
            if best.as_ref().is_none_or(|b| acc > b.0 || (acc == b.0 && loss < b.1)) {
                best = Some((acc, loss, self.model.clone(), self.last_loss));
                stale = 0;
            } else {
                stale += 1;
                if self.cfg.early_stop_patience > 0 && stale >= self.cfg.early_stop_patience {
                    break;
                }
            }
        }
        if let Some((_, _, model, loss)) = best {
            self.model = model;
            self.last_loss = loss;
        }
        Ok(())
    }

    pub fn finish(mut self) -> SurrogateModel {
        self.model.snap_to_f32();
        SurrogateModel {
            model: self.model,
            attack_type: self.cfg.attack_type,
            embedding_loss: self.last_loss,
        }
    }
}

/// Run the alternating extraction attack for `cfg.epochs` epochs. `ds` is the
/// attacker's own data (for example the subgraph induced by the surrogate
/// split).
pub fn run_extraction(oracle: &dyn QueryOracle, ds: &GraphDataset, cfg: &AttackConfig) -> Result<SurrogateModel> {
    let mut run = Extraction::new(oracle, ds, cfg)?;
    run.train_with_early_stopping(Extraction::epoch)?;
    Ok(run.finish())
}

/// Extract a second surrogate from a first one, with the same attack type.
pub fn double_extract(first: &SurrogateModel, ds: &GraphDataset, cfg: &AttackConfig) -> Result<SurrogateModel> {
    if cfg.attack_type != first.attack_type {
        return Err(Error::invalid(format!(
            "double extraction must reuse the first stage's attack type ({})",
            first.attack_type
        )));
    }
    run_extraction(&LocalOracle::new(first.model.clone()), ds, cfg)
}

/// Sample standard-normal rows, used as the discriminator's "real" class.
pub(crate) fn gaussian_rows(n: usize, d: usize, s: u64) -> Mat {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = seed::rng(s);
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
}
