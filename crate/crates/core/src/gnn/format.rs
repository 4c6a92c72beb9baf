//! Single-file model container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `GNNFPMDL` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | header length `L` (`u64`) |
//! | L | UTF-8 JSON header |
//! | rest | `f32` tensor data, row-major, in header order |
//!
//! The header holds the config, input width, class count, head activation
//! and the tensor table (`name`, `shape`). Serialization is canonical: the
//! same model always yields the same bytes.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::GnnConfig;
use super::layers::{GatLayer, GinLayer, GnnLayer, SageLayer};
use super::model::GnnModel;
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mat, Mlp};

pub const MAGIC: &[u8; 8] = b"GNNFPMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: GnnConfig,
    input_dim: usize,
    num_classes: usize,
    head_activation: Activation,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

impl GnnModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.named_params();
        let header = Header {
            config: self.config.clone(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            head_activation: self.head.activation,
            tensors: params
                .iter()
                .map(|(name, p)| TensorEntry {
                    name: name.clone(),
                    shape: [p.nrows(), p.ncols()],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 4 * params.iter().map(|(_, p)| p.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, p) in &params {
            for &x in p.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < 20 {
            return Err(bad("truncated preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        let mut data = &body[header_len..];

        let mut tensors: HashMap<String, Mat> = HashMap::new();
        for entry in &header.tensors {
            let n = entry.shape[0]
                .checked_mul(entry.shape[1])
                .ok_or_else(|| bad("tensor too large"))?;
            if data.len() < 4 * n {
                return Err(Error::ModelFormat(format!("truncated tensor {}", entry.name)));
            }
            let values: Vec<f64> = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            data = &data[4 * n..];
            let m = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values).unwrap();
            if tensors.insert(entry.name.clone(), m).is_some() {
                return Err(Error::ModelFormat(format!("duplicate tensor {}", entry.name)));
            }
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }

        let mut take = |name: String| {
            tensors
                .remove(&name)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))
        };
        let mut layers = Vec::new();
        for entry in &header.tensors {
            let Some(rest) = entry.name.strip_prefix(&format!("layers.{}.", layers.len())) else {
                continue;
            };
            let kind = rest.split('.').next().unwrap_or("");
            let p = |n: &str| format!("layers.{}.{kind}.{n}", layers.len());
            let layer = match kind {
                "sage" => GnnLayer::Sage(SageLayer {
                    self_weight: take(p("self_weight"))?,
                    neigh_weight: take(p("neigh_weight"))?,
                    bias: take(p("bias"))?,
                }),
                "gat" => GnnLayer::Gat(GatLayer {
                    weight: take(p("weight"))?,
                    attn_src: take(p("attn_src"))?,
                    attn_dst: take(p("attn_dst"))?,
                    residual: take(p("residual"))?,
                    bias: take(p("bias"))?,
                }),
                "gin" => GnnLayer::Gin(GinLayer {
                    eps: take(p("eps"))?,
                    w1: take(p("w1"))?,
                    b1: take(p("b1"))?,
                    w2: take(p("w2"))?,
                    b2: take(p("b2"))?,
                }),
                other => return Err(Error::ModelFormat(format!("unknown layer kind {other:?}"))),
            };
            layers.push(layer);
        }
        let output_transform = if header.tensors.iter().any(|t| t.name == "output_transform.weight") {
            Some(Dense {
                weight: take("output_transform.weight".into())?,
                bias: take("output_transform.bias".into())?,
            })
        } else {
            None
        };
        let mut head_layers = Vec::new();
        while header.tensors.iter().any(|t| t.name == format!("head.{}.weight", head_layers.len())) {
            let j = head_layers.len();
            head_layers.push(Dense {
                weight: take(format!("head.{j}.weight"))?,
                bias: take(format!("head.{j}.bias"))?,
            });
        }
        if let Some(name) = tensors.keys().min() {
            return Err(Error::ModelFormat(format!("unrecognized tensor {name}")));
        }
        if head_layers.is_empty() {
            return Err(bad("model has no classifier head"));
        }
        Ok(GnnModel {
            config: header.config,
            input_dim: header.input_dim,
            num_classes: header.num_classes,
            layers,
            output_transform,
            head: Mlp {
                layers: head_layers,
                activation: header.head_activation,
            },
        })
    }
}
