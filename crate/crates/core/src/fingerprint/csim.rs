use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FingerprintTrainingSet;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, sigmoid, Activation, Adam, Mat, Mlp};
use crate::seed;

/// Training and model-selection settings for the similarity classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsimConfig {
    pub hidden_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub folds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once the training loss has not improved by `tol` for
    /// `patience` consecutive epochs.
    pub tol: f64,
    pub patience: usize,
    /// Scale each distance column to zero mean and unit variance, with
    /// statistics taken from the training rows.
    pub standardize: bool,
}

impl Default for CsimConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 128],
            activations: vec![Activation::Tanh, Activation::Relu],
            folds: 10,
            learning_rate: 0.001,
            batch_size: 200,
            l2: 1e-4,
            max_epochs: 200,
            tol: 1e-4,
            patience: 10,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub hidden: usize,
    pub activation: Activation,
    pub mean_accuracy: f64,
}

/// Two-layer MLP scoring distance vectors; a probability above 0.5 means
/// "similar".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityClassifier {
    pub mlp: Mlp,
    pub hidden: usize,
    pub activation: Activation,
    /// Mean cross-validated accuracy of the selected configuration.
    pub cv_accuracy: f64,
    pub grid: Vec<GridResult>,
    /// Per-column mean and scale applied to distance vectors before the MLP.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl SimilarityClassifier {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn probabilities(&self, rows: &Mat) -> Result<Vec<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                left: self.input_dim(),
                right: rows.ncols(),
            });
        }
        Ok(self.mlp.forward(&standardize(rows, &self.shift, &self.scale)).iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn predict(&self, rows: &Mat) -> Result<Vec<bool>> {
        Ok(self.probabilities(rows)?.into_iter().map(|p| p > 0.5).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn standardize(rows: &Mat, shift: &[f64], scale: &[f64]) -> Mat {
    let mut x = rows.clone();
    for (mut col, (m, s)) in x.columns_mut().into_iter().zip(shift.iter().zip(scale)) {
        col.mapv_inplace(|v| (v - m) / s);
    }
    x
}

/// Column means and standard deviations, or the identity transform when
/// standardization is off.
fn column_stats(rows: &Mat, on: bool) -> (Vec<f64>, Vec<f64>) {
    rows.columns()
        .into_iter()
        .map(|c| {
            if !on {
                return (0.0, 1.0);
            }
            let m = c.mean().unwrap_or(0.0);
            let sd = c.mapv(|v| (v - m) * (v - m)).mean().unwrap_or(0.0).sqrt();
            (m, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

fn fit(x: &Mat, y: &[f64], hidden: usize, activation: Activation, cfg: &CsimConfig, s: u64) -> Mlp {
    let mut rng = seed::rng(s);
    let mut mlp = Mlp::init(&[x.ncols(), hidden, 1], activation, &mut rng);
    let mut adam = Adam::new(cfg.learning_rate, &mlp.params()).with_l2(cfg.l2);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let (logits, cache) = mlp.forward_cached(&xb);
            let (loss, grad) = bce_with_logits(&logits, &yb);
            let (grads, _) = mlp.backward(&cache, &grad);
            adam.step(mlp.params_mut(), &grads);
            total += loss * batch.len() as f64;
        }
        let loss = total / x.nrows() as f64;
        if loss > best - cfg.tol {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(loss);
    }
    mlp
}

fn accuracy(mlp: &Mlp, x: &Mat, y: &[f64]) -> f64 {
    let logits = mlp.forward(x);
    let hits = logits.iter().zip(y).filter(|(&z, &t)| (z > 0.0) == (t > 0.5)).count();
    hits as f64 / y.len() as f64
}

/// Grid-search hidden width and activation by k-fold cross-validated
/// accuracy, then refit the best configuration on all rows. Ties go to the
/// earlier grid entry, so smaller widths win.
pub fn train_csim(ts: &FingerprintTrainingSet, cfg: &CsimConfig, seed: u64) -> Result<SimilarityClassifier> {
    if ts.is_empty() {
        return Err(Error::Empty("fingerprint training set".into()));
    }
    if ts.positives() == 0 || ts.negatives() == 0 {
        return Err(Error::SingleClass);
    }
    if cfg.hidden_sizes.is_empty() || cfg.activations.is_empty() || cfg.folds < 2 {
        return Err(Error::invalid("C_sim grid needs widths, activations and at least 2 folds"));
    }
    let y: Vec<f64> = ts.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive_seed(seed, "csim/folds")));
    let folds = cfg.folds.min(ts.len());
    let fold_of = |pos: usize| pos * folds / order.len();

    let mut hidden_sizes = cfg.hidden_sizes.clone();
    hidden_sizes.sort_unstable();
    let grid: Vec<(usize, Activation)> = hidden_sizes
        .iter()
        .flat_map(|&h| cfg.activations.iter().map(move |&a| (h, a)))
        .collect();

    let mut results = Vec::with_capacity(grid.len());
    for (gi, &(hidden, activation)) in grid.iter().enumerate() {
        let scores: Vec<f64> = (0..folds)
            .into_par_iter()
            .map(|f| {
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for (pos, &i) in order.iter().enumerate() {
                    if fold_of(pos) == f { test.push(i) } else { train.push(i) }
                }
                let xt = ts.rows.select(Axis(0), &train);
                let (m, sd) = column_stats(&xt, cfg.standardize);
                let xt = standardize(&xt, &m, &sd);
                let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let s = seed::mix3(seed, gi as u64, f as u64);
                let mlp = fit(&xt, &yt, hidden, activation, cfg, s);
                let yv: Vec<f64> = test.iter().map(|&i| y[i]).collect();
                accuracy(&mlp, &standardize(&ts.rows.select(Axis(0), &test), &m, &sd), &yv)
            })
            .collect();
        results.push(GridResult {
            hidden,
            activation,
            mean_accuracy: scores.iter().sum::<f64>() / folds as f64,
        });
    }
    let best = results
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.mean_accuracy > results[b].mean_accuracy { i } else { b });
    let GridResult {
        hidden,
        activation,
        mean_accuracy,
    } = results[best].clone();
    let (shift, scale) = column_stats(&ts.rows, cfg.standardize);
    let mlp = fit(&standardize(&ts.rows, &shift, &scale), &y, hidden, activation, cfg, seed::derive_seed(seed, "csim/refit"));
    Ok(SimilarityClassifier {
        mlp,
        hidden,
        activation,
        cv_accuracy: mean_accuracy,
        grid: results,
        shift,
        scale,
    })
}
