//! On-disk layout: `<dir>/edges.tsv` (two tab-separated node ids per line),
//! `<dir>/features.csv` (one headerless row per node) and `<dir>/labels.csv`
//! (one integer per line).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Adjacency, Graph, GraphDataset};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let edges_path = dir.join("edges.tsv");
    let features_path = dir.join("features.csv");
    let labels_path = dir.join("labels.csv");
    let edges_text = read(&edges_path)?;
    let features_text = read(&features_path)?;
    let labels_text = read(&labels_path)?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in data_lines(&features_text) {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(format!("features.csv line {line_no}"), e))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    format!("features.csv line {line_no}"),
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let node_count = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((node_count, dim), rows.concat())
        .map_err(|e| Error::parse("features.csv", e))?;

    let mut labels = Vec::with_capacity(node_count);
    for (line_no, line) in data_lines(&labels_text) {
        let value = line.split(',').next().unwrap_or("").trim();
        let y = value.parse::<usize>().map_err(|_| {
            Error::parse(
                format!("labels.csv line {line_no}"),
                format!("non-integer label {value:?}"),
            )
        })?;
        labels.push(y);
    }

    let mut edges = Vec::new();
    for (line_no, line) in data_lines(&edges_text) {
        let mut cols = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let s = cols.next().ok_or_else(|| {
                Error::parse(format!("edges.tsv line {line_no}"), "expected two columns")
            })?;
            s.parse::<usize>()
                .map_err(|e| Error::parse(format!("edges.tsv line {line_no}"), e))
        };
        let u = next()?;
        let v = next()?;
        edges.push((u, v));
    }

    let adjacency = Adjacency::from_edges(node_count, edges)?;
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    GraphDataset::new(Graph::new(adjacency, features)?, labels, num_classes)
}

pub fn save_dataset(ds: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut edges = String::new();
    for (u, v) in ds.adjacency().edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut features = String::new();
    for row in ds.features().outer_iter() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        features.push_str(&line.join(","));
        features.push('\n');
    }
    fs::write(dir.join("features.csv"), features)?;

    let mut labels = String::new();
    for y in ds.labels() {
        writeln!(labels, "{y}").unwrap();
    }
    fs::write(dir.join("labels.csv"), labels)?;
    Ok(())
}
