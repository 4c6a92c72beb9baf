//! Dense layers, MLPs, losses and the Adam optimizer.
//!
//! All tensors are row-major `Array2<f64>`; biases are `1 x out` rows so every
//! parameter shares one type.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: &Mat) -> Mat {
        match self {
            Activation::Relu => z.mapv(|x| x.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Gradient through the activation given its pre-activation `z` and
    /// output `a`.
    pub fn backward(self, z: &Mat, a: &Mat, grad: &Mat) -> Mat {
        let mut out = grad.clone();
        match self {
            Activation::Relu => Zip::from(&mut out).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(&mut out).and(a).for_each(|g, &a| *g *= 1.0 - a * a),
        }
        out
    }
}

/// Glorot-uniform initialized matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Add a `1 x n` bias row to every row of `x`.
pub fn add_bias(x: &mut Mat, bias: &Mat) {
    *x += &bias.row(0);
}

pub fn column_sums(x: &Mat) -> Mat {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Mat,
}

impl Dense {
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot(input, output, rng),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.dot(&self.weight);
        add_bias(&mut y, &self.bias);
        y
    }

    /// Returns `([d_weight, d_bias], d_input)`.
    pub fn backward(&self, x: &Mat, dy: &Mat) -> ([Mat; 2], Mat) {
        let dw = x.t().dot(dy);
        let db = column_sums(dy);
        let dx = dy.dot(&self.weight.t());
        ([dw, db], dx)
    }
}

/// Fully connected network: hidden layers use `activation`, the last layer is
/// linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

pub struct MlpCache {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
}

impl Mlp {
    /// `widths = [input, hidden..., output]`.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = self.activation.apply(&h);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Mat) -> (Mat, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(std::mem::replace(&mut h, Array2::zeros((0, 0))));
            h = if i < last {
                self.activation.apply(&z)
            } else {
                z.clone()
            };
            pre.push(z);
        }
        (h, MlpCache { inputs, pre })
    }

    /// Returns parameter gradients (in [`Mlp::params`] order) and the input
    /// gradient.
    pub fn backward(&self, cache: &MlpCache, dout: &Mat) -> (Vec<Mat>, Mat) {
        let last = self.layers.len() - 1;
        let mut grads = vec![Array2::zeros((0, 0)); 2 * self.layers.len()];
        let mut d = dout.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let a = &cache.inputs[i + 1];
                d = self.activation.backward(&cache.pre[i], a, &d);
            }
            let ([dw, db], dx) = self.layers[i].backward(&cache.inputs[i], &d);
            grads[2 * i] = dw;
            grads[2 * i + 1] = db;
            d = dx;
        }
        (grads, d)
    }

    pub fn params(&self) -> Vec<&Mat> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Mat, labels: &[usize]) -> (f64, Mat) {
    let n = logits.nrows();
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= grad[[i, y]].max(1e-300).ln();
        grad[[i, y]] -= 1.0;
    }
    grad /= n as f64;
    (loss / n as f64, grad)
}

pub fn softmax(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub fn argmax_rows(x: &Mat) -> Vec<usize> {
    x.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on `n x 1` logits; returns the logit gradient.
pub fn bce_with_logits(logits: &Mat, targets: &[f64]) -> (f64, Mat) {
    let n = logits.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, &t) in targets.iter().enumerate() {
        let z = logits[[i, 0]];
        // log(1 + e^z) - t z, computed stably
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad[[i, 0]] = (sigmoid(z) - t) / n;
    }
    (loss / n, grad)
}

/// Adam with optional L2 penalty folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[&Mat]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0,
            step: 0,
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn step(&mut self, params: Vec<&mut Mat>, grads: &[Mat]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        self.step += 1;
        let (b1, b2, eps, l2) = (self.beta1, self.beta2, self.epsilon, self.l2);
        let lr_t = self.learning_rate * (1.0 - b2.powi(self.step)).sqrt()
            / (1.0 - b1.powi(self.step));
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + l2 * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + eps);
                });
        }
    }
}
