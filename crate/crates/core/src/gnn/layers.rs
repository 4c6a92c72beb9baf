//! Message-passing layers.
//!
//! Every layer maps source rows `x` (`n_src x in`) and, for each of the
//! `m = neighbors.len()` destination nodes, a list of neighbor positions in
//! `x`, to `m x out` outputs. Destination `i` is source row `i`. Neighbor
//! lists are multisets; an empty list aggregates to the zero vector.

use ndarray::{s, Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Architecture;
use crate::error::{Error, Result};
use crate::nn::{add_bias, column_sums, glorot, Activation, Mat};

const LEAKY_SLOPE: f64 = 0.2;

/// GraphSAGE-mean: `relu(W_self h_v + W_neigh mean(h_u) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub self_weight: Mat,
    pub neigh_weight: Mat,
    pub bias: Mat,
}

/// Multi-head graph attention with a linear skip connection:
/// `relu(concat_k sum_u alpha_uv^k W^k h_u + W_res h_v + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    /// `in x (heads * head_dim)`; head `k` owns column block `k`.
    pub weight: Mat,
    /// `heads x head_dim`, scores the neighbor side.
    pub attn_src: Mat,
    /// `heads x head_dim`, scores the destination side.
    pub attn_dst: Mat,
    pub residual: Mat,
    pub bias: Mat,
}

/// GIN: `relu(MLP((1 + eps) h_v + sum_u h_u))` with a two-layer ReLU MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    /// `1 x 1`
    pub eps: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GnnLayer {
    Sage(SageLayer),
    Gat(GatLayer),
    Gin(GinLayer),
}

/// Intermediate values kept for the backward pass.
pub struct LayerCache {
    x: Mat,
    pre: Mat,
    kind: CacheKind,
}

enum CacheKind {
    Sage { agg: Mat },
    Gat { z: Mat, alpha: Vec<f64>, score: Vec<f64>, offsets: Vec<usize> },
    Gin { s: Mat, a1: Mat, r: Mat },
}

fn check_neighbors(x: &Mat, neighbors: &[Vec<usize>], input_dim: usize) -> Result<()> {
    if x.ncols() != input_dim {
        return Err(Error::ShapeMismatch(format!(
            "layer expects {input_dim} input columns, got {}",
            x.ncols()
        )));
    }
    if neighbors.len() > x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} destinations but only {} source rows",
            neighbors.len(),
            x.nrows()
        )));
    }
    if let Some(&bad) = neighbors.iter().flatten().find(|&&j| j >= x.nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "neighbor position {bad} out of {} source rows",
            x.nrows()
        )));
    }
    Ok(())
}

fn axpy(mut dst: ArrayViewMut1<f64>, alpha: f64, src: ArrayView1<f64>) {
    dst.scaled_add(alpha, &src);
}

impl GnnLayer {
    pub fn init(arch: Architecture, input: usize, output: usize, heads: usize, rng: &mut impl Rng) -> Self {
        match arch {
            Architecture::GraphSage => GnnLayer::Sage(SageLayer {
                self_weight: glorot(input, output, rng),
                neigh_weight: glorot(input, output, rng),
                bias: Array2::zeros((1, output)),
            }),
            Architecture::Gat => {
                let head_dim = output / heads;
                GnnLayer::Gat(GatLayer {
                    weight: glorot(input, output, rng),
                    attn_src: glorot(heads, head_dim, rng),
                    attn_dst: glorot(heads, head_dim, rng),
                    residual: glorot(input, output, rng),
                    bias: Array2::zeros((1, output)),
                })
            }
            Architecture::Gin => GnnLayer::Gin(GinLayer {
                eps: Array2::zeros((1, 1)),
                w1: glorot(input, output, rng),
                b1: Array2::zeros((1, output)),
                w2: glorot(output, output, rng),
                b2: Array2::zeros((1, output)),
            }),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            GnnLayer::Sage(_) => Architecture::GraphSage,
            GnnLayer::Gat(_) => Architecture::Gat,
            GnnLayer::Gin(_) => Architecture::Gin,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            GnnLayer::Sage(l) => l.self_weight.nrows(),
            GnnLayer::Gat(l) => l.weight.nrows(),
            GnnLayer::Gin(l) => l.w1.nrows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            GnnLayer::Sage(l) => l.self_weight.ncols(),
            GnnLayer::Gat(l) => l.weight.ncols(),
            GnnLayer::Gin(l) => l.w2.ncols(),
        }
    }

    pub fn heads(&self) -> usize {
        match self {
            GnnLayer::Gat(l) => l.attn_src.nrows(),
            _ => 1,
        }
    }

    /// Parameter names, in [`GnnLayer::params`] order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            GnnLayer::Sage(_) => &["self_weight", "neigh_weight", "bias"],
            GnnLayer::Gat(_) => &["weight", "attn_src", "attn_dst", "residual", "bias"],
            GnnLayer::Gin(_) => &["eps", "w1", "b1", "w2", "b2"],
        }
    }

    pub fn params(&self) -> Vec<&Mat> {
        match self {
            GnnLayer::Sage(l) => vec![&l.self_weight, &l.neigh_weight, &l.bias],
            GnnLayer::Gat(l) => vec![&l.weight, &l.attn_src, &l.attn_dst, &l.residual, &l.bias],
            GnnLayer::Gin(l) => vec![&l.eps, &l.w1, &l.b1, &l.w2, &l.b2],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        match self {
            GnnLayer::Sage(l) => vec![&mut l.self_weight, &mut l.neigh_weight, &mut l.bias],
            GnnLayer::Gat(l) => vec![
                &mut l.weight,
                &mut l.attn_src,
                &mut l.attn_dst,
                &mut l.residual,
                &mut l.bias,
            ],
            GnnLayer::Gin(l) => vec![&mut l.eps, &mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2],
        }
    }

    /// Expected parameter shapes for a layer of this kind.
    pub fn expected_shapes(arch: Architecture, input: usize, output: usize, heads: usize) -> Vec<[usize; 2]> {
        match arch {
            Architecture::GraphSage => vec![[input, output], [input, output], [1, output]],
            Architecture::Gat => {
                let head_dim = output / heads.max(1);
                vec![
                    [input, output],
                    [heads, head_dim],
                    [heads, head_dim],
                    [input, output],
                    [1, output],
                ]
            }
            Architecture::Gin => vec![[1, 1], [input, output], [1, output], [output, output], [1, output]],
        }
    }

    pub fn forward(&self, x: &Mat, neighbors: &[Vec<usize>]) -> Result<Mat> {
        Ok(self.forward_cached(x, neighbors)?.0)
    }

    pub fn forward_cached(&self, x: &Mat, neighbors: &[Vec<usize>]) -> Result<(Mat, LayerCache)> {
        check_neighbors(x, neighbors, self.input_dim())?;
        let m = neighbors.len();
        let x_dst = x.slice(s![..m, ..]);
        let (pre, kind) = match self {
            GnnLayer::Sage(l) => {
                let mut agg = Array2::zeros((m, x.ncols()));
                for (i, list) in neighbors.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let scale = 1.0 / list.len() as f64;
                    for &j in list {
                        axpy(agg.row_mut(i), scale, x.row(j));
                    }
                }
                let mut pre = x_dst.dot(&l.self_weight) + agg.dot(&l.neigh_weight);
                add_bias(&mut pre, &l.bias);
                (pre, CacheKind::Sage { agg })
            }
            GnnLayer::Gat(l) => {
                let heads = l.attn_src.nrows();
                let head_dim = l.attn_src.ncols();
                let z = x.dot(&l.weight);
                let el = head_scores(&z, &l.attn_dst, m);
                let er = head_scores(&z, &l.attn_src, z.nrows());
                let mut offsets = Vec::with_capacity(m + 1);
                offsets.push(0);
                for list in neighbors {
                    offsets.push(offsets.last().unwrap() + list.len() * heads);
                }
                let total = *offsets.last().unwrap();
                let mut alpha = vec![0.0; total];
                let mut score = vec![0.0; total];
                let mut pre = x_dst.dot(&l.residual);
                add_bias(&mut pre, &l.bias);
                for (i, list) in neighbors.iter().enumerate() {
                    let base = offsets[i];
                    for k in 0..heads {
                        let mut max = f64::NEG_INFINITY;
                        for (t, &j) in list.iter().enumerate() {
                            let sv = el[[i, k]] + er[[j, k]];
                            score[base + t * heads + k] = sv;
                            let e = leaky(sv);
                            alpha[base + t * heads + k] = e;
                            max = max.max(e);
                        }
                        let mut sum = 0.0;
                        for t in 0..list.len() {
                            let a = &mut alpha[base + t * heads + k];
                            *a = (*a - max).exp();
                            sum += *a;
                        }
                        let cols = k * head_dim..(k + 1) * head_dim;
                        for (t, &j) in list.iter().enumerate() {
                            let a = &mut alpha[base + t * heads + k];
                            *a /= sum;
                            let a = *a;
                            axpy(pre.slice_mut(s![i, cols.clone()]), a, z.slice(s![j, cols.clone()]));
                        }
                    }
                }
                (pre, CacheKind::Gat { z, alpha, score, offsets })
            }
            GnnLayer::Gin(l) => {
                let one_eps = 1.0 + l.eps[[0, 0]];
                let mut sum = x_dst.to_owned() * one_eps;
                for (i, list) in neighbors.iter().enumerate() {
                    for &j in list {
                        axpy(sum.row_mut(i), 1.0, x.row(j));
                    }
                }
                let mut a1 = sum.dot(&l.w1);
                add_bias(&mut a1, &l.b1);
                let r = Activation::Relu.apply(&a1);
                let mut pre = r.dot(&l.w2);
                add_bias(&mut pre, &l.b2);
                (pre, CacheKind::Gin { s: sum, a1, r })
            }
        };
        let out = Activation::Relu.apply(&pre);
        let cache = LayerCache {
            x: x.clone(),
            pre,
            kind,
        };
        Ok((out, cache))
    }

    /// Backward pass: parameter gradients (in [`GnnLayer::params`] order) and
    /// the gradient with respect to the source rows.
    pub fn backward(&self, cache: &LayerCache, neighbors: &[Vec<usize>], dout: &Mat) -> (Vec<Mat>, Mat) {
        let x = &cache.x;
        let m = neighbors.len();
        let x_dst = x.slice(s![..m, ..]);
        let dpre = Activation::Relu.backward(&cache.pre, &cache.pre, dout);
        let mut dx = Array2::zeros(x.raw_dim());
        match (self, &cache.kind) {
            (GnnLayer::Sage(l), CacheKind::Sage { agg }) => {
                let d_self = x_dst.t().dot(&dpre);
                let d_neigh = agg.t().dot(&dpre);
                let d_bias = column_sums(&dpre);
                let dx_self = dpre.dot(&l.self_weight.t());
                let d_agg = dpre.dot(&l.neigh_weight.t());
                dx.slice_mut(s![..m, ..]).assign(&dx_self);
                for (i, list) in neighbors.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let scale = 1.0 / list.len() as f64;
                    for &j in list {
                        axpy(dx.row_mut(j), scale, d_agg.row(i));
                    }
                }
                (vec![d_self, d_neigh, d_bias], dx)
            }
            (GnnLayer::Gat(l), CacheKind::Gat { z, alpha, score, offsets }) => {
                let heads = l.attn_src.nrows();
                let head_dim = l.attn_src.ncols();
                let d_bias = column_sums(&dpre);
                let d_res = x_dst.t().dot(&dpre);
                dx.slice_mut(s![..m, ..]).assign(&dpre.dot(&l.residual.t()));

                let mut dz = Array2::zeros(z.raw_dim());
                let mut d_el = Array2::<f64>::zeros((m, heads));
                let mut d_er = Array2::<f64>::zeros((z.nrows(), heads));
                let mut d_alpha = Vec::new();
                for (i, list) in neighbors.iter().enumerate() {
                    let base = offsets[i];
                    for k in 0..heads {
                        let cols = k * head_dim..(k + 1) * head_dim;
                        let g = dpre.slice(s![i, cols.clone()]);
                        d_alpha.clear();
                        let mut weighted = 0.0;
                        for (t, &j) in list.iter().enumerate() {
                            let a = alpha[base + t * heads + k];
                            axpy(dz.slice_mut(s![j, cols.clone()]), a, g);
                            let da = g.dot(&z.slice(s![j, cols.clone()]));
                            weighted += a * da;
                            d_alpha.push(da);
                        }
                        for (t, &j) in list.iter().enumerate() {
                            let idx = base + t * heads + k;
                            let de = alpha[idx] * (d_alpha[t] - weighted);
                            let ds = if score[idx] > 0.0 { de } else { LEAKY_SLOPE * de };
                            d_el[[i, k]] += ds;
                            d_er[[j, k]] += ds;
                        }
                    }
                }
                let mut d_attn_dst = Array2::zeros(l.attn_dst.raw_dim());
                let mut d_attn_src = Array2::zeros(l.attn_src.raw_dim());
                for k in 0..heads {
                    let cols = k * head_dim..(k + 1) * head_dim;
                    for i in 0..m {
                        let g = d_el[[i, k]];
                        if g != 0.0 {
                            axpy(d_attn_dst.row_mut(k), g, z.slice(s![i, cols.clone()]));
                            axpy(dz.slice_mut(s![i, cols.clone()]), g, l.attn_dst.row(k));
                        }
                    }
                    for j in 0..z.nrows() {
                        let g = d_er[[j, k]];
                        if g != 0.0 {
                            axpy(d_attn_src.row_mut(k), g, z.slice(s![j, cols.clone()]));
                            axpy(dz.slice_mut(s![j, cols.clone()]), g, l.attn_src.row(k));
                        }
                    }
                }
                let d_weight = x.t().dot(&dz);
                dx += &dz.dot(&l.weight.t());
                (vec![d_weight, d_attn_src, d_attn_dst, d_res, d_bias], dx)
            }
            (GnnLayer::Gin(l), CacheKind::Gin { s: sum, a1, r }) => {
                let d_w2 = r.t().dot(&dpre);
                let d_b2 = column_sums(&dpre);
                let dr = dpre.dot(&l.w2.t());
                let da1 = Activation::Relu.backward(a1, r, &dr);
                let d_w1 = sum.t().dot(&da1);
                let d_b1 = column_sums(&da1);
                let ds = da1.dot(&l.w1.t());
                let one_eps = 1.0 + l.eps[[0, 0]];
                let mut d_eps = 0.0;
                for i in 0..m {
                    d_eps += ds.row(i).dot(&x.row(i));
                    axpy(dx.row_mut(i), one_eps, ds.row(i));
                    for &j in &neighbors[i] {
                        axpy(dx.row_mut(j), 1.0, ds.row(i));
                    }
                }
                let d_eps = Array2::from_elem((1, 1), d_eps);
                (vec![d_eps, d_w1, d_b1, d_w2, d_b2], dx)
            }
            _ => unreachable!("cache built by a different layer kind"),
        }
    }

    /// GAT attention coefficients, indexed `[destination][head][neighbor]`.
    /// Other layer kinds return `None`.
    pub fn attention(&self, x: &Mat, neighbors: &[Vec<usize>]) -> Result<Option<Vec<Vec<Vec<f64>>>>> {
        if !matches!(self, GnnLayer::Gat(_)) {
            return Ok(None);
        }
        let (_, cache) = self.forward_cached(x, neighbors)?;
        let heads = self.heads();
        let CacheKind::Gat { alpha, offsets, .. } = cache.kind else {
            unreachable!()
        };
        let coeffs = neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                (0..heads)
                    .map(|k| {
                        (0..list.len())
                            .map(|t| alpha[offsets[i] + t * heads + k])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Some(coeffs))
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Per-row, per-head dot products of `z` column blocks with `attn` rows.
fn head_scores(z: &Mat, attn: &Mat, rows: usize) -> Mat {
    let heads = attn.nrows();
    let head_dim = attn.ncols();
    Array2::from_shape_fn((rows, heads), |(i, k)| {
        z.slice(s![i, k * head_dim..(k + 1) * head_dim]).dot(&attn.row(k))
    })
}

/// Apply one layer to explicit neighbor lists.
pub fn layer_forward(layer: &GnnLayer, h_prev: &Mat, neighbors: &[Vec<usize>]) -> Result<Mat> {
    layer.forward(h_prev, neighbors)
}
