use super::model::GnnModel;
use crate::error::{Error, Result};

/// Whether a named parameter counts as a weight for pruning. Biases and
/// GIN's epsilon are excluded.
pub fn is_prunable(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    !matches!(last, "bias" | "b1" | "b2" | "eps")
}

/// Total number of prunable weights.
pub fn weight_count(model: &GnnModel) -> usize {
    model
        .named_params()
        .into_iter()
        .filter(|(n, _)| is_prunable(n))
        .map(|(_, p)| p.len())
        .sum()
}

/// Global magnitude pruning: zero the `floor(ratio * W)` weights with the
/// smallest absolute value, ties broken by position in canonical parameter
/// order.
pub fn prune(model: &GnnModel, ratio: f64) -> Result<GnnModel> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("prune ratio {ratio} outside [0, 1]")));
    }
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut pruned = model.clone();
    // params_mut and named_params share one order
    let mut params = pruned.params_mut();
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, (name, p)) in names.iter().zip(params.iter()).enumerate() {
        if !is_prunable(name) {
            continue;
        }
        entries.extend(p.iter().enumerate().map(|(i, w)| (w.abs(), pi, i)));
    }
    let k = (ratio * entries.len() as f64 + 1e-9).floor() as usize;
    let k = k.min(entries.len());
    if k > 0 {
        entries.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        for &(_, pi, i) in &entries[..k] {
            let p = &mut params[pi];
            let cols = p.ncols();
            p[[i / cols, i % cols]] = 0.0;
        }
    }
    Ok(pruned)
}
