//! Metrics, experiment orchestration and plots.

mod experiment;
pub mod plot;

use serde::{Deserialize, Serialize};

pub use experiment::{
    assemble_table, read_manifest, run_experiment, DatasetSpec, EvasionConfig, ExperimentConfig, ManifestEntry,
    MetricsRow, MetricsTable, Outcome, StageStatus, SuspectRecord, TimingRow,
};

use crate::error::{Error, Result};
use crate::fingerprint::Verdict;

fn agreement(a: &[usize], b: &[usize], what: &str) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty(format!("{what} label vector")));
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{what}: {} vs {} labels", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

/// Fraction of predictions equal to the truth.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    agreement(pred, truth, "accuracy")
}

/// Fraction of positions where two models predict the same label.
pub fn fidelity(pred_a: &[usize], pred_b: &[usize]) -> Result<f64> {
    agreement(pred_a, pred_b, "fidelity")
}

/// False-positive and false-negative rates. A rate whose denominator is
/// zero is `None`, never 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

/// Rates over `(truth, verdict)` pairs, "surrogate" being the positive class.
pub fn fpr_fnr(verdicts: &[(Verdict, Verdict)]) -> Rates {
    let count = |t: Verdict, v: Verdict| verdicts.iter().filter(|&&p| p == (t, v)).count();
    let fp = count(Verdict::Independent, Verdict::Surrogate);
    let tn = count(Verdict::Independent, Verdict::Independent);
    let fn_ = count(Verdict::Surrogate, Verdict::Independent);
    let tp = count(Verdict::Surrogate, Verdict::Surrogate);
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Rates {
        fpr: rate(fp, fp + tn),
        fnr: rate(fn_, fn_ + tp),
    }
}

/// Mean and 95% confidence half-width (1.96 standard errors) over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// `None` with fewer than two values.
    pub half_width: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: None,
                half_width: None,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        });
        Self {
            mean: Some(mean),
            half_width,
            n,
        }
    }

    /// `mean ± half-width`, with `n/a` for missing parts.
    pub fn display(&self) -> String {
        match (self.mean, self.half_width) {
            (None, _) => "n/a".into(),
            (Some(m), None) => format!("{m:.3} ± n/a"),
            (Some(m), Some(h)) => format!("{m:.3} ± {h:.3}"),
        }
    }
}

#[cfg(test)]
mod tests;
