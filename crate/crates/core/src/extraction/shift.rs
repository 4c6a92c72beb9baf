//! Evasion attempt: push the surrogate's embedding distribution towards a
//! standard Gaussian with an adversarial discriminator while keeping the
//! extraction loss.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{gaussian_rows, row_21_loss_and_grad, AttackConfig, Extraction, QueryOracle, SurrogateModel};
use crate::error::Result;
use crate::graph_data::GraphDataset;
use crate::nn::{bce_with_logits, sigmoid, Activation, Adam, Mat, Mlp};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    /// Weight of the adversarial term in the surrogate's loss.
    pub adversarial_weight: f64,
    /// Weight of the extraction (fidelity) term; 0 drops it.
    pub fidelity_weight: f64,
    pub discriminator_hidden: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            adversarial_weight: 0.1,
            fidelity_weight: 1.0,
            discriminator_hidden: 64,
        }
    }
}

/// Three-layer MLP scoring how Gaussian an embedding row looks.
pub struct Discriminator {
    mlp: Mlp,
    adam: Adam,
}

impl Discriminator {
    pub fn new(dim: usize, hidden: usize, learning_rate: f64, s: u64) -> Self {
        let mlp = Mlp::init(&[dim, hidden, hidden, 1], Activation::Relu, &mut seed::rng(s));
        let adam = Adam::new(learning_rate, &mlp.params());
        Self { mlp, adam }
    }

    /// One update on Gaussian rows (label 1) against `fake` rows (label 0).
    pub fn train_step(&mut self, real: &Mat, fake: &Mat) -> f64 {
        let x = ndarray::concatenate(Axis(0), &[real.view(), fake.view()]).expect("same width");
        let targets: Vec<f64> = (0..x.nrows()).map(|i| if i < real.nrows() { 1.0 } else { 0.0 }).collect();
        let (logits, cache) = self.mlp.forward_cached(&x);
        let (loss, grad) = bce_with_logits(&logits, &targets);
        let (grads, _) = self.mlp.backward(&cache, &grad);
        self.adam.step(self.mlp.params_mut(), &grads);
        loss
    }

    /// Probability that each row is Gaussian.
    pub fn probabilities(&self, x: &Mat) -> Vec<f64> {
        self.mlp.forward(x).iter().map(|&z| sigmoid(z)).collect()
    }

    pub fn accuracy(&self, real: &Mat, fake: &Mat) -> f64 {
        let hits = self.probabilities(real).iter().filter(|&&p| p > 0.5).count()
            + self.probabilities(fake).iter().filter(|&&p| p <= 0.5).count();
        hits as f64 / (real.nrows() + fake.nrows()) as f64
    }

    /// Generator loss `BCE(D(x), 1)` and its gradient with respect to `x`.
    pub fn generator_loss(&self, x: &Mat) -> (f64, Mat) {
        let (logits, cache) = self.mlp.forward_cached(x);
        let (loss, grad) = bce_with_logits(&logits, &vec![1.0; x.nrows()]);
        let (_, dx) = self.mlp.backward(&cache, &grad);
        (loss, dx)
    }
}

/// Extraction attack with an added adversarial term pulling embeddings
/// towards `N(0, I)`.
pub fn distribution_shift_attack(
    oracle: &dyn QueryOracle,
    ds: &GraphDataset,
    cfg: &AttackConfig,
    shift: &ShiftConfig,
) -> Result<SurrogateModel> {
    let mut run = Extraction::new(oracle, ds, cfg)?;
    let dim = run.target_embeddings().ncols();
    let mut disc = Discriminator::new(
        dim,
        shift.discriminator_hidden,
        cfg.learning_rate,
        seed::derive_seed(cfg.seed, "shift/discriminator"),
    );
    run.train_with_early_stopping(|run| {
        let (s, batches) = run.batches("shift/embedding", cfg.batch_size);
        let mut rng = seed::rng(s);
        let (query_seed, answers) = run.current_query().clone();
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (h, cache) = run.model.forward_cached(&run.graph, batch, query_seed, Some(&mut rng))?;
            let real = gaussian_rows(batch.len(), dim, seed::mix3(s, b as u64, 2));
            disc.train_step(&real, &h);
            let target = answers.select(Axis(0), batch);
            let (fid_loss, fid_grad) = row_21_loss_and_grad(&h, &target)?;
            let (adv_loss, adv_grad) = disc.generator_loss(&h);
            let grad: Mat = fid_grad * shift.fidelity_weight + adv_grad * shift.adversarial_weight;
            let grads = run.model.backward_embedding(&cache, &grad);
            run.emb_adam.step(run.model.embedding_params_mut(), &grads);
            total += shift.fidelity_weight * fid_loss + shift.adversarial_weight * adv_loss;
        }
        run.last_loss = total / batches.len() as f64;
        run.classifier_step()?;
        run.epoch += 1;
        Ok(())
    })?;
    Ok(run.finish())
}
