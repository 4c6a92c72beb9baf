use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::GnnConfig;
use super::layers::{GnnLayer, LayerCache};
use super::sampling::{build_blocks, Block};
use crate::error::{Error, Result};
use crate::graph_data::{check_nodes, Graph};
use crate::nn::{argmax_rows, Activation, Dense, Mat, Mlp, MlpCache};
use crate::seed;

/// Message-passing embedding network plus classifier head.
///
/// Embeddings are the output of the last message-passing layer (after the
/// optional `output_transform`, which stock models never carry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub layers: Vec<GnnLayer>,
    /// A linear map applied to embeddings before they are returned. Not part
    /// of any recognized architecture.
    pub output_transform: Option<Dense>,
    pub head: Mlp,
}

pub struct ForwardCache {
    blocks: Vec<Block>,
    layers: Vec<LayerCache>,
    masks: Vec<Option<Mat>>,
    pre_transform: Option<Mat>,
}

impl GnnModel {
    /// Fresh model with a single dense classifier head.
    pub fn init(config: &GnnConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::init_with_head(config, input_dim, num_classes, &[], Activation::Relu)
    }

    /// Fresh model whose head is an MLP with the given hidden widths.
    pub fn init_with_head(
        config: &GnnConfig,
        input_dim: usize,
        num_classes: usize,
        head_hidden: &[usize],
        head_activation: Activation,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("input_dim and num_classes must be positive"));
        }
        let mut rng = seed::rng(seed::derive_seed(config.seed, "model/init"));
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut width = input_dim;
        for i in 0..config.num_layers {
            let mut layer = GnnLayer::init(
                config.architecture,
                width,
                config.hidden_dim,
                config.heads_at(i),
                &mut rng,
            );
            // A GIN layer sums 1 + fanout rows; keep its output on the scale
            // of one input row.
            if let GnnLayer::Gin(gin) = &mut layer {
                let terms = 1 + config.neighbor_samples[i].max(1);
                gin.w1 /= (terms as f64).sqrt();
            }
            layers.push(layer);
            width = config.hidden_dim;
        }
        let mut widths = vec![config.hidden_dim];
        widths.extend_from_slice(head_hidden);
        widths.push(num_classes);
        let head = Mlp::init(&widths, head_activation, &mut rng);
        let mut model = Self {
            config: config.clone(),
            input_dim,
            num_classes,
            layers,
            output_transform: None,
            head,
        };
        model.snap_to_f32();
        Ok(model)
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.output_transform {
            Some(t) => t.output_dim(),
            None => self.layers.last().map_or(0, GnnLayer::output_dim),
        }
    }

    /// Round every parameter to the nearest `f32`, the precision models are
    /// stored at.
    pub fn snap_to_f32(&mut self) {
        for p in self.params_mut() {
            p.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Every parameter with its canonical name, embedding network first.
    pub fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = layer_kind(layer);
            for (name, p) in layer.param_names().iter().zip(layer.params()) {
                out.push((format!("layers.{i}.{kind}.{name}"), p));
            }
        }
        if let Some(t) = &self.output_transform {
            out.push(("output_transform.weight".into(), &t.weight));
            out.push(("output_transform.bias".into(), &t.bias));
        }
        for (j, d) in self.head.layers.iter().enumerate() {
            out.push((format!("head.{j}.weight"), &d.weight));
            out.push((format!("head.{j}.bias"), &d.bias));
        }
        out
    }

    pub fn embedding_params(&self) -> Vec<&Mat> {
        let mut out: Vec<&Mat> = self.layers.iter().flat_map(GnnLayer::params).collect();
        if let Some(t) = &self.output_transform {
            out.push(&t.weight);
            out.push(&t.bias);
        }
        out
    }

    pub fn embedding_params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = self.layers.iter_mut().flat_map(GnnLayer::params_mut).collect();
        if let Some(t) = &mut self.output_transform {
            out.push(&mut t.weight);
            out.push(&mut t.bias);
        }
        out
    }

    pub fn params(&self) -> Vec<&Mat> {
        let mut out = self.embedding_params();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = self.layers.iter_mut().flat_map(GnnLayer::params_mut).collect();
        if let Some(t) = &mut self.output_transform {
            out.push(&mut t.weight);
            out.push(&mut t.bias);
        }
        out.extend(self.head.params_mut());
        out
    }

    /// Shape problems that would make a forward pass ill-defined, as
    /// `(layer index, description)`; head layers are indexed after the
    /// message-passing layers.
    pub fn shape_findings(&self) -> Vec<(usize, String)> {
        let mut findings = Vec::new();
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.output_dim();
            let heads = layer.heads();
            if heads == 0 || out % heads != 0 {
                findings.push((i, format!("shape mismatch: {out} outputs over {heads} heads")));
            }
            let expected = GnnLayer::expected_shapes(layer.architecture(), width, out, heads);
            for ((name, p), shape) in layer.param_names().iter().zip(layer.params()).zip(expected) {
                if p.shape() != shape {
                    findings.push((
                        i,
                        format!("shape mismatch: {name} is {:?}, expected {:?}", p.shape(), shape),
                    ));
                }
            }
            width = out;
        }
        let n = self.layers.len();
        if let Some(t) = &self.output_transform {
            if t.weight.nrows() != width || t.bias.shape() != [1, t.weight.ncols()] {
                findings.push((n, "shape mismatch: output transform".to_string()));
            }
            width = t.weight.ncols();
        }
        for (j, d) in self.head.layers.iter().enumerate() {
            if d.weight.nrows() != width || d.bias.shape() != [1, d.weight.ncols()] {
                findings.push((n + j, format!("shape mismatch: head layer {j}")));
            }
            width = d.weight.ncols();
        }
        if self.head.layers.is_empty() || width != self.num_classes {
            findings.push((n, format!("shape mismatch: head emits {width} classes, expected {}", self.num_classes)));
        }
        findings
    }

    fn check_forward(&self, graph: &Graph, nodes: &[usize]) -> Result<()> {
        if nodes.is_empty() {
            return Err(Error::Empty("node set".into()));
        }
        check_nodes(nodes, graph.node_count())?;
        if graph.feature_dim() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, graph has {}",
                self.input_dim,
                graph.feature_dim()
            )));
        }
        if let Some((_, msg)) = self.shape_findings().into_iter().next() {
            return Err(Error::ShapeMismatch(msg));
        }
        Ok(())
    }

    fn fanouts(&self) -> Vec<usize> {
        let mut f = self.config.neighbor_samples.clone();
        f.resize(self.layers.len(), 0);
        f
    }

    /// Embeddings for `nodes`, computed in chunks of `batch_size`. Neighbor
    /// sampling is keyed per node, so chunking does not change the result.
    pub fn embed(&self, graph: &Graph, nodes: &[usize], seed: u64) -> Result<Mat> {
        self.check_forward(graph, nodes)?;
        let chunk = self.config.batch_size.max(1);
        let mut out = Array2::zeros((nodes.len(), self.embedding_dim()));
        for (c, batch) in nodes.chunks(chunk).enumerate() {
            let (h, _) = self.forward_cached(graph, batch, seed, None::<&mut rand_chacha::ChaCha8Rng>)?;
            out.slice_mut(ndarray::s![c * chunk..c * chunk + batch.len(), ..]).assign(&h);
        }
        Ok(out)
    }

    /// Embeddings of every node in `graph`.
    pub fn embed_all(&self, graph: &Graph, seed: u64) -> Result<Mat> {
        let nodes: Vec<usize> = (0..graph.node_count()).collect();
        self.embed(graph, &nodes, seed)
    }

    /// `(embeddings, logits)` for `nodes`.
    pub fn forward(&self, graph: &Graph, nodes: &[usize], seed: u64) -> Result<(Mat, Mat)> {
        let h = self.embed(graph, nodes, seed)?;
        let logits = self.head.forward(&h);
        Ok((h, logits))
    }

    pub fn predict(&self, graph: &Graph, nodes: &[usize], seed: u64) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(graph, nodes, seed)?.1))
    }

    /// Embedding forward pass that keeps what [`GnnModel::backward_embedding`]
    /// needs. Passing a dropout RNG enables training-mode dropout.
    pub fn forward_cached<R: Rng>(
        &self,
        graph: &Graph,
        nodes: &[usize],
        seed: u64,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Mat, ForwardCache)> {
        self.check_forward(graph, nodes)?;
        let blocks = build_blocks(&graph.adjacency, nodes, &self.fanouts(), seed);
        let p = self.config.dropout;
        let first = &blocks[0];
        let mut h = graph.features.select(Axis(0), &first.src);
        let mut layer_caches = Vec::with_capacity(blocks.len());
        let mut masks = Vec::with_capacity(blocks.len());
        for (layer, block) in self.layers.iter().zip(&blocks) {
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m = Array2::from_shape_fn(h.raw_dim(), |_| {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    });
                    h *= &m;
                    Some(m)
                }
                _ => None,
            };
            let (out, cache) = layer.forward_cached(&h, &block.neighbors)?;
            masks.push(mask);
            layer_caches.push(cache);
            h = out;
        }
        let mut pre_transform = None;
        if let Some(t) = &self.output_transform {
            let y = t.forward(&h);
            pre_transform = Some(h);
            h = y;
        }
        Ok((
            h,
            ForwardCache {
                blocks,
                layers: layer_caches,
                masks,
                pre_transform,
            },
        ))
    }

    /// Gradients of the embedding parameters (in
    /// [`GnnModel::embedding_params`] order) given the embedding gradient.
    pub fn backward_embedding(&self, cache: &ForwardCache, d_emb: &Mat) -> Vec<Mat> {
        let mut d = d_emb.clone();
        let mut transform_grads = Vec::new();
        if let (Some(t), Some(x)) = (&self.output_transform, &cache.pre_transform) {
            let ([dw, db], dx) = t.backward(x, &d);
            transform_grads = vec![dw, db];
            d = dx;
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let (grads, mut dx) =
                self.layers[l].backward(&cache.layers[l], &cache.blocks[l].neighbors, &d);
            if let Some(m) = &cache.masks[l] {
                dx *= m;
            }
            per_layer.push(grads);
            d = dx;
        }
        per_layer.reverse();
        let mut out: Vec<Mat> = per_layer.into_iter().flatten().collect();
        out.extend(transform_grads);
        out
    }

    /// Cross-entropy training step gradients for all parameters, in
    /// [`GnnModel::params`] order. Returns `(loss, grads)`.
    pub fn loss_and_grads<R: Rng>(
        &self,
        graph: &Graph,
        nodes: &[usize],
        labels: &[usize],
        seed: u64,
        dropout_rng: Option<&mut R>,
    ) -> Result<(f64, Vec<Mat>)> {
        let (h, cache) = self.forward_cached(graph, nodes, seed, dropout_rng)?;
        let (logits, head_cache): (Mat, MlpCache) = self.head.forward_cached(&h);
        let (loss, dlogits) = crate::nn::softmax_cross_entropy(&logits, labels);
        let (head_grads, dh) = self.head.backward(&head_cache, &dlogits);
        let mut grads = self.backward_embedding(&cache, &dh);
        grads.extend(head_grads);
        Ok((loss, grads))
    }
}

pub(crate) fn layer_kind(layer: &GnnLayer) -> &'static str {
    match layer {
        GnnLayer::Sage(_) => "sage",
        GnnLayer::Gat(_) => "gat",
        GnnLayer::Gin(_) => "gin",
    }
}
