use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[serde(rename = "graphsage")]
    GraphSage,
    Gat,
    Gin,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::GraphSage, Architecture::Gat, Architecture::Gin];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::GraphSage => "graphsage",
            Architecture::Gat => "gat",
            Architecture::Gin => "gin",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphsage" | "sage" => Ok(Architecture::GraphSage),
            "gat" => Ok(Architecture::Gat),
            "gin" => Ok(Architecture::Gin),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Architecture and training hyperparameters of a node classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub architecture: Architecture,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Neighbors sampled per node at each layer, input side first.
    /// A fanout of 0 means "use the full neighborhood".
    pub neighbor_samples: Vec<usize>,
    /// Heads on every GAT layer except the last, which has one.
    pub attention_heads: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub early_stop_patience: usize,
    pub activation: Activation,
    pub batch_size: usize,
    pub seed: u64,
}

impl GnnConfig {
    pub fn new(architecture: Architecture) -> Self {
        let (num_layers, neighbor_samples, dropout) = match architecture {
            Architecture::GraphSage => (2, vec![25, 10], 0.5),
            Architecture::Gat => (3, vec![10, 10, 10], 0.0),
            Architecture::Gin => (3, vec![10, 10, 10], 0.0),
        };
        Self {
            architecture,
            num_layers,
            hidden_dim: 256,
            neighbor_samples,
            attention_heads: 4,
            dropout,
            learning_rate: 0.001,
            max_epochs: 200,
            early_stop_patience: 20,
            activation: Activation::Relu,
            batch_size: 512,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hidden_dim(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    /// Heads used by layer `index` (0-based).
    pub fn heads_at(&self, index: usize) -> usize {
        if self.architecture == Architecture::Gat && index + 1 < self.num_layers {
            self.attention_heads
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        if self.num_layers == 0 {
            return Err(Error::invalid("num_layers must be positive"));
        }
        if self.neighbor_samples.len() != self.num_layers {
            return Err(Error::invalid(format!(
                "neighbor_samples has {} entries for {} layers",
                self.neighbor_samples.len(),
                self.num_layers
            )));
        }
        if self.architecture == Architecture::Gat
            && self.num_layers > 1
            && (self.attention_heads == 0 || !self.hidden_dim.is_multiple_of(self.attention_heads))
        {
            return Err(Error::invalid(
                "GAT hidden_dim must be divisible by attention_heads",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.activation != Activation::Relu {
            return Err(Error::invalid("GNN layers use ReLU"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_architecture() {
        let sage = GnnConfig::new(Architecture::GraphSage);
        assert_eq!((sage.num_layers, sage.neighbor_samples.clone()), (2, vec![25, 10]));
        assert_eq!(sage.dropout, 0.5);
        let gat = GnnConfig::new(Architecture::Gat);
        assert_eq!(gat.num_layers, 3);
        assert_eq!((gat.heads_at(0), gat.heads_at(1), gat.heads_at(2)), (4, 4, 1));
        let gin = GnnConfig::new(Architecture::Gin);
        assert_eq!(gin.neighbor_samples, vec![10, 10, 10]);
        for cfg in [sage, gat, gin] {
            assert_eq!(cfg.hidden_dim, 256);
            assert_eq!(cfg.learning_rate, 0.001);
            assert_eq!(cfg.max_epochs, 200);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn validation_catches_layer_count_mismatch() {
        let mut cfg = GnnConfig::new(Architecture::Gin);
        cfg.neighbor_samples.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn architecture_parses() {
        assert_eq!("sage".parse::<Architecture>().unwrap(), Architecture::GraphSage);
        assert_eq!("GAT".parse::<Architecture>().unwrap(), Architecture::Gat);
        assert!("gcn".parse::<Architecture>().is_err());
    }
}
