//! Top-K accuracy, accuracy–complexity efficiency (ACE) and average power loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The K values reported for every method.
pub const REPORTED_K: [usize; 4] = [1, 2, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame_id: u64,
    pub label: usize,
    /// Beam ids by descending predicted probability.
    pub ranked: Vec<usize>,
    /// Received power of the ground-truth beam.
    pub power_true: f64,
    /// Received power of the top-ranked beam.
    pub power_pred: f64,
    /// Smallest beam power in this frame.
    pub power_min: f64,
}

/// Percentage of records whose label is among the first `k` ranked beams.
pub fn topk_accuracy(records: &[EvalRecord], k: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let hits = records
        .iter()
        .filter(|r| r.ranked.iter().take(k).any(|&b| b == r.label))
        .count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// `mean(accuracies) / ln(1 + Π)`, accuracies in percent.
pub fn ace_score(accuracies: &[f64], params: u64) -> Result<f64> {
    ace_score_real(accuracies, params as f64)
}

/// [`ace_score`] for a real-valued parameter count (e.g. `e − 1`).
pub fn ace_score_real(accuracies: &[f64], params: f64) -> Result<f64> {
    if !(params >= 1.0) {
        return Err(Error::InvalidInput(format!("parameter count {params} < 1")));
    }
    if accuracies.is_empty() || accuracies.iter().any(|a| !(0.0..=100.0).contains(a)) {
        return Err(Error::InvalidInput("accuracies must lie in [0, 100]".into()));
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(mean / params.ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLoss {
    pub db: f64,
    /// The noise-floor estimate `P_x`.
    pub floor: f64,
    /// Records with predicted-beam power not above the floor.
    pub excluded: usize,
}

/// `10·log₁₀` of the mean ratio `(P_true − P_x)/(P_pred − P_x)`, where `P_x`
/// is the mean of the per-frame minimum beam powers.
pub fn power_loss_db(records: &[EvalRecord]) -> Result<PowerLoss> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let floor = records.iter().map(|r| r.power_min).sum::<f64>() / records.len() as f64;
    let mut sum = 0.0;
    let mut used = 0usize;
    for r in records {
        if r.power_pred <= floor {
            continue;
        }
        sum += (r.power_true - floor) / (r.power_pred - floor);
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidInput(
            "every record is at or below the power floor".into(),
        ));
    }
    Ok(PowerLoss {
        db: 10.0 * (sum / used as f64).log10(),
        floor,
        excluded: records.len() - used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    /// Keyed by K.
    pub topk: BTreeMap<usize, f64>,
    pub ace: f64,
    pub params: u64,
    pub power_loss_db: f64,
    pub excluded_records: usize,
}

impl MethodMetrics {
    pub fn from_records(records: &[EvalRecord], params: u64) -> Result<Self> {
        let topk = REPORTED_K
            .iter()
            .map(|&k| Ok((k, topk_accuracy(records, k)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let accs: Vec<f64> = topk.values().copied().collect();
        let loss = power_loss_db(records)?;
        Ok(Self {
            ace: ace_score(&accs, params)?,
            topk,
            params,
            power_loss_db: loss.db,
            excluded_records: loss.excluded,
        })
    }

    /// `(metric, value)` pairs in a fixed order, for tabular export.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.topk.iter().map(|(k, v)| (format!("top{k}"), *v)).collect();
        out.push(("ace".into(), self.ace));
        out.push(("power_loss_db".into(), self.power_loss_db));
        out.push(("excluded_records".into(), self.excluded_records as f64));
        out.push(("params".into(), self.params as f64));
        out
    }
}
