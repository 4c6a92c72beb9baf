//! 2-D embedding projections and distance histograms, written as SVG plus a
//! CSV of the plotted numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Verdict;
use crate::gnn::GnnModel;
use crate::graph_data::Graph;
use crate::nn::Mat;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Pca,
    Tsne,
}

impl std::str::FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Projection::Pca),
            "tsne" | "t-sne" => Ok(Projection::Tsne),
            other => Err(Error::invalid(format!("unknown projection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub set: String,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

fn stack(sets: &[(String, Mat)]) -> Result<Mat> {
    let width = sets[0].1.ncols();
    if let Some((_, m)) = sets.iter().find(|(_, m)| m.ncols() != width) {
        return Err(Error::DimensionMismatch {
            left: width,
            right: m.ncols(),
        });
    }
    let views: Vec<_> = sets.iter().map(|(_, m)| m.view()).collect();
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
}

/// Top two principal components of the rows of `x`. Each axis is signed so
/// that its largest loading is positive.
pub fn pca_2d(x: &Mat) -> Mat {
    let (n, d) = x.dim();
    let mean = x.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Mat::zeros((d, 2));
    for (k, &c) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(c);
        let pivot = (0..d).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, k]] = sign * v[i];
        }
    }
    centered.dot(&basis)
}

/// Exact t-SNE (perplexity 30, PCA initialisation), for a few hundred
/// points at most.
pub fn tsne_2d(x: &Mat) -> Mat {
    let n = x.nrows();
    let mut y = pca_2d(x);
    let spread = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    y.mapv_inplace(|v| v / spread * 1e-2);
    if n < 3 {
        return y;
    }
    let perplexity = 30f64.min((n - 1) as f64 / 3.0);
    let mut d2 = Mat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            d2[[i, j]] = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
        }
    }
    // Conditional affinities with a per-point bandwidth matching the target
    // perplexity.
    let mut p = Mat::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut h = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let w = (-d2[[i, j]] * beta).exp();
                p[[i, j]] = w;
                sum += w;
            }
            let sum = sum.max(1e-300);
            for j in (0..n).filter(|&j| j != i) {
                p[[i, j]] /= sum;
                if p[[i, j]] > 0.0 {
                    h -= p[[i, j]] * p[[i, j]].ln();
                }
            }
            if (h - perplexity.ln()).abs() < 1e-5 {
                break;
            }
            if h > perplexity.ln() {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let p = (&p + &p.t()) / (2.0 * n as f64);
    let learning_rate = (n as f64 / 48.0).max(50.0);
    let mut velocity = Mat::zeros((n, 2));
    let mut gains = Mat::ones((n, 2));
    for iter in 0..500 {
        let exaggeration = if iter < 100 { 12.0 } else { 1.0 };
        let momentum = if iter < 250 { 0.5 } else { 0.8 };
        let mut num = Mat::zeros((n, n));
        let mut z = 0.0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let q = 1.0 / (1.0 + (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2));
                num[[i, j]] = q;
                z += q;
            }
        }
        let mut grad = Mat::zeros((n, 2));
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let coeff = 4.0 * (exaggeration * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        // Per-coordinate adaptive gains.
        ndarray::Zip::from(&mut gains).and(&grad).and(&velocity).for_each(|g, &d, &v| {
            *g = if (d > 0.0) != (v > 0.0) { *g + 0.2 } else { (*g * 0.8).max(0.01) };
        });
        velocity = velocity * momentum - &gains * &grad * learning_rate;
        y += &velocity;
    }
    y
}

/// Project the union of `sets` to 2-D and split the points back by set.
pub fn project(sets: &[(String, Mat)], method: Projection) -> Result<Vec<ProjectedPoint>> {
    if sets.is_empty() {
        return Err(Error::Empty("embedding sets".into()));
    }
    let x = stack(sets)?;
    if x.nrows() < 2 {
        return Err(Error::invalid("a projection needs at least 2 points"));
    }
    let y = match method {
        Projection::Pca => pca_2d(&x),
        Projection::Tsne => tsne_2d(&x),
    };
    let mut out = Vec::with_capacity(x.nrows());
    let mut row = 0;
    for (name, m) in sets {
        for index in 0..m.nrows() {
            out.push(ProjectedPoint {
                set: name.clone(),
                index,
                x: y[[row, 0]],
                y: y[[row, 1]],
            });
            row += 1;
        }
    }
    Ok(out)
}

/// Mean 2-D position of each set.
pub fn centroids(points: &[ProjectedPoint]) -> BTreeMap<String, (f64, f64)> {
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(p.set.clone()).or_insert((0.0, 0.0, 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(k, (x, y, n))| (k, (x / n as f64, y / n as f64)))
        .collect()
}

pub fn projection_csv(points: &[ProjectedPoint]) -> String {
    let mut out = String::from("set,index,x,y\n");
    for p in points {
        let _ = writeln!(out, "{},{},{:.12e},{:.12e}", p.set, p.index, p.x, p.y);
    }
    out
}

pub fn parse_projection_csv(text: &str) -> Result<Vec<ProjectedPoint>> {
    let bad = |line: usize, m: &str| Error::parse(format!("projection csv line {line}"), m);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()));
        out.push(ProjectedPoint {
            set: f[0].to_string(),
            index: f[1].parse().map_err(|_| bad(i + 1, "bad index"))?,
            x: num(f[2])?,
            y: num(f[3])?,
        });
    }
    Ok(out)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 50.0;

    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if hi - lo < 1e-12 {
                (lo - 1.0, hi + 1.0)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        Self::PAD + (x - self.x0) / (self.x1 - self.x0) * (Self::W - 2.0 * Self::PAD)
    }

    fn py(&self, y: f64) -> f64 {
        Self::H - Self::PAD - (y - self.y0) / (self.y1 - self.y0) * (Self::H - 2.0 * Self::PAD)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let (w, h, pad) = (Self::W, Self::H, Self::PAD);
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
             <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
            w / 2.0,
            escape(title),
            w - 2.0 * pad,
            h - 2.0 * pad,
            w / 2.0,
            h - 14.0,
            escape(xlabel),
            h / 2.0,
            h / 2.0,
            escape(ylabel)
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(svg: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = Frame::PAD + 16.0 + 16.0 * i as f64;
        let x = Frame::W - Frame::PAD - 150.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{c}\"/>", y - 9.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{y}\">{}</text>", x + 14.0, escape(name));
    }
}

pub fn projection_svg(points: &[ProjectedPoint], title: &str) -> String {
    let frame = Frame::new(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut names: Vec<String> = Vec::new();
    for p in points {
        if !names.contains(&p.set) {
            names.push(p.set.clone());
        }
    }
    let mut svg = frame.open(title, "component 1", "component 2");
    for p in points {
        let c = PALETTE[names.iter().position(|n| *n == p.set).unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\" fill-opacity=\"0.6\"/>",
            frame.px(p.x),
            frame.py(p.y)
        );
    }
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    svg
}

/// Project `sets` and write `<stem>.svg` and `<stem>.csv`.
pub fn emit_projection_plot(sets: &[(String, Mat)], method: Projection, stem: &Path) -> Result<Vec<ProjectedPoint>> {
    let points = project(sets, method)?;
    let title = match method {
        Projection::Pca => "PCA projection of embeddings",
        Projection::Tsne => "t-SNE projection of embeddings",
    };
    write_pair(stem, &projection_svg(&points, title), &projection_csv(&points))?;
    Ok(points)
}

fn write_pair(stem: &Path, svg: &str, csv: &str) -> Result<()> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(stem.with_extension("svg"), svg)?;
    fs::write(stem.with_extension("csv"), csv)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub model: String,
    pub kind: Verdict,
    pub node: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub samples: Vec<DistanceSample>,
    /// `bins + 1` edges shared by both groups.
    pub edges: Vec<f64>,
    pub surrogate_counts: Vec<usize>,
    pub independent_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub surrogate_mean: Option<f64>,
    pub independent_mean: Option<f64>,
    pub overlap: Option<f64>,
}

impl DistanceHistogram {
    pub const BINS: usize = 30;

    pub fn from_samples(samples: Vec<DistanceSample>) -> Self {
        let hi = samples.iter().map(|s| s.distance).fold(0.0, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        let edges: Vec<f64> = (0..=Self::BINS).map(|i| hi * i as f64 / Self::BINS as f64).collect();
        let mut surrogate_counts = vec![0; Self::BINS];
        let mut independent_counts = vec![0; Self::BINS];
        for s in &samples {
            let bin = ((s.distance / hi * Self::BINS as f64) as usize).min(Self::BINS - 1);
            match s.kind {
                Verdict::Surrogate => surrogate_counts[bin] += 1,
                Verdict::Independent => independent_counts[bin] += 1,
            }
        }
        Self {
            samples,
            edges,
            surrogate_counts,
            independent_counts,
        }
    }

    pub fn mean(&self, kind: Verdict) -> Option<f64> {
        let d: Vec<f64> = self.samples.iter().filter(|s| s.kind == kind).map(|s| s.distance).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }

    /// Sum over bins of the smaller of the two normalized frequencies.
    pub fn overlap(&self) -> Option<f64> {
        let (s, i): (usize, usize) = (self.surrogate_counts.iter().sum(), self.independent_counts.iter().sum());
        if s == 0 || i == 0 {
            return None;
        }
        let sum = (self.surrogate_counts.iter().zip(&self.independent_counts))
            .map(|(&a, &b)| (a as f64 / s as f64).min(b as f64 / i as f64))
            .sum();
        Some(sum)
    }

    pub fn summary(&self) -> HistogramSummary {
        HistogramSummary {
            surrogate_mean: self.mean(Verdict::Surrogate),
            independent_mean: self.mean(Verdict::Independent),
            overlap: self.overlap(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,kind,node,distance\n");
        for s in &self.samples {
            let kind = match s.kind {
                Verdict::Surrogate => "surrogate",
                Verdict::Independent => "independent",
            };
            let _ = writeln!(out, "{},{kind},{},{:.12e}", s.model, s.node, s.distance);
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let peak = |c: &[usize]| {
            let t: usize = c.iter().sum();
            c.iter().map(|&v| v as f64 / t.max(1) as f64).fold(0.0, f64::max)
        };
        let top = peak(&self.surrogate_counts).max(peak(&self.independent_counts)).max(1e-9);
        let frame = Frame::new(
            [self.edges[0], self.edges[Self::BINS]].into_iter(),
            [0.0, top].into_iter(),
        );
        let mut svg = frame.open("Euclidean distance to the target embedding", "distance", "fraction of nodes");
        for (k, counts) in [&self.surrogate_counts, &self.independent_counts].into_iter().enumerate() {
            let total: usize = counts.iter().sum();
            for (b, &c) in counts.iter().enumerate() {
                let f = c as f64 / total.max(1) as f64;
                let (x0, x1) = (frame.px(self.edges[b]), frame.px(self.edges[b + 1]));
                let (y0, y1) = (frame.py(f), frame.py(0.0));
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.5\"/>",
                    x1 - x0,
                    y1 - y0,
                    PALETTE[k]
                );
            }
        }
        legend(&mut svg, &["surrogate".into(), "independent".into()]);
        svg.push_str("</svg>\n");
        svg
    }
}

/// Per-node Euclidean distances between the target's embeddings and each
/// other model's on `d_v`; writes `<stem>.svg` and `<stem>.csv`.
pub fn emit_distance_histogram(
    target: &GnnModel,
    others: &[(String, Verdict, &GnnModel)],
    graph: &Graph,
    d_v: &[usize],
    seed: u64,
    stem: &Path,
) -> Result<DistanceHistogram> {
    if others.is_empty() {
        return Err(Error::Empty("models to compare against the target".into()));
    }
    let ht = target.embed(graph, d_v, seed)?;
    let mut samples = Vec::new();
    for (name, kind, model) in others {
        let h = model.embed(graph, d_v, seed)?;
        let d = crate::fingerprint::distance_matrix(&ht, &h)?;
        for (row, &node) in d.outer_iter().zip(d_v) {
            samples.push(DistanceSample {
                model: name.clone(),
                kind: *kind,
                node,
                distance: row.sum().sqrt(),
            });
        }
    }
    let hist = DistanceHistogram::from_samples(samples);
    write_pair(stem, &hist.to_svg(), &hist.to_csv())?;
    Ok(hist)
}
