use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::GnnConfig;
use super::model::GnnModel;
use crate::error::{Error, Result};
use crate::graph_data::{check_nodes, Graph, GraphDataset};
use crate::nn::{argmax_rows, softmax_cross_entropy, Adam};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub validation_accuracy: f64,
    pub wall_time_seconds: f64,
}

/// Sampling seed used for evaluation passes during training.
const EVAL_STREAM: &str = "train/eval";

/// One pass over `nodes` in shuffled minibatches, updating every parameter.
/// Returns the mean batch loss.
pub(crate) fn run_epoch(
    model: &mut GnnModel,
    adam: &mut Adam,
    graph: &Graph,
    nodes: &[usize],
    labels: &[usize],
    epoch_seed: u64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    let mut rng = seed::rng(epoch_seed);
    order.shuffle(&mut rng);
    let mut total = 0.0;
    let mut batches = 0;
    for (b, chunk) in order.chunks(model.config.batch_size).enumerate() {
        let batch: Vec<usize> = chunk.iter().map(|&i| nodes[i]).collect();
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let sample_seed = seed::mix3(epoch_seed, b as u64, 1);
        let (loss, grads) = model.loss_and_grads(graph, &batch, &y, sample_seed, Some(&mut rng))?;
        adam.step(model.params_mut(), &grads);
        total += loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

fn evaluate(model: &GnnModel, graph: &Graph, nodes: &[usize], labels: &[usize], seed: u64) -> Result<(f64, f64)> {
    let (_, logits) = model.forward(graph, nodes, seed)?;
    let (loss, _) = softmax_cross_entropy(&logits, labels);
    let pred = argmax_rows(&logits);
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok((correct as f64 / labels.len() as f64, loss))
}

/// Train a fresh model on the subgraph induced by `train_nodes`.
///
/// A tenth of `train_nodes` (at least one node) is held out for early
/// stopping on validation accuracy, with validation loss breaking ties. The
/// best epoch's parameters are returned.
pub fn train(config: &GnnConfig, ds: &GraphDataset, train_nodes: &[usize]) -> Result<(GnnModel, TrainReport)> {
    let start = Instant::now();
    config.validate()?;
    if train_nodes.is_empty() {
        return Err(Error::Empty("training node set".into()));
    }
    check_nodes(train_nodes, ds.node_count())?;
    let sub = ds.induced(train_nodes)?;
    let mut classes: Vec<usize> = sub.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }

    let mut perm: Vec<usize> = (0..sub.node_count()).collect();
    perm.shuffle(&mut seed::rng(seed::derive_seed(config.seed, "train/validation")));
    let n_val = if perm.len() >= 2 { (perm.len() / 10).max(1) } else { 0 };
    let (val, fit) = perm.split_at(n_val);
    let fit_labels: Vec<usize> = fit.iter().map(|&v| sub.labels()[v]).collect();
    let val_labels: Vec<usize> = val.iter().map(|&v| sub.labels()[v]).collect();

    let mut model = GnnModel::init(config, ds.feature_dim(), ds.num_classes())?;
    let mut adam = Adam::new(config.learning_rate, &model.params());
    let eval_seed = seed::derive_seed(config.seed, EVAL_STREAM);
    let epoch_base = seed::derive_seed(config.seed, "train/epochs");

    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_model = model.clone();
    let mut stale = 0;
    let mut epochs_run = 0;
    let mut last_loss = f64::NAN;
    for epoch in 0..config.max_epochs {
        last_loss = run_epoch(
            &mut model,
            &mut adam,
            sub.graph(),
            fit,
            &fit_labels,
            seed::mix3(epoch_base, epoch as u64, 0),
        )?;
        epochs_run += 1;
        if val.is_empty() {
            best_model = model.clone();
            continue;
        }
        let (acc, loss) = evaluate(&model, sub.graph(), val, &val_labels, eval_seed)?;
        if acc > best.0 || (acc == best.0 && loss < best.1) {
            best = (acc, loss);
            best_model = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience > 0 && stale >= config.early_stop_patience {
                break;
            }
        }
    }
    best_model.snap_to_f32();
    let validation_accuracy = if val.is_empty() {
        f64::NAN
    } else {
        evaluate(&best_model, sub.graph(), val, &val_labels, eval_seed)?.0
    };
    Ok((
        best_model,
        TrainReport {
            epochs_run,
            final_train_loss: last_loss,
            validation_accuracy,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Fine-tuning runs Adam at this fraction of the model's training rate. At
/// the full rate a single epoch already moved a trained model off a tenth of
/// its own test predictions.
pub const FINE_TUNE_LR_SCALE: f64 = 0.1;

/// Continue training every parameter of `model` for exactly `epochs` epochs
/// on the subgraph induced by `nodes`.
pub fn fine_tune(model: &GnnModel, ds: &GraphDataset, nodes: &[usize], epochs: usize) -> Result<GnnModel> {
    if epochs == 0 {
        return Err(Error::invalid("fine-tuning needs at least one epoch"));
    }
    if nodes.is_empty() {
        return Err(Error::Empty("fine-tuning node set".into()));
    }
    check_nodes(nodes, ds.node_count())?;
    let sub = ds.induced(nodes)?;
    let all: Vec<usize> = (0..sub.node_count()).collect();
    let mut tuned = model.clone();
    let mut adam = Adam::new(model.config.learning_rate * FINE_TUNE_LR_SCALE, &tuned.params());
    let base = seed::derive_seed(model.config.seed, "fine_tune/epochs");
    for epoch in 0..epochs {
        run_epoch(
            &mut tuned,
            &mut adam,
            sub.graph(),
            &all,
            sub.labels(),
            seed::mix3(base, epoch as u64, 0),
        )?;
    }
    tuned.snap_to_f32();
    Ok(tuned)
}
