//! Entropy-gated choice between the semantic and the GPS classifier, plus the
//! exhaustive β calibration grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Prediction;

/// Tolerance used when checking that a vector sums to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub(crate) fn entropy_unchecked(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

/// Shannon entropy in nats, `0·ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidInput(format!(
            "not a probability vector (sum {sum}, {} entries)",
            probs.len()
        )));
    }
    Ok(entropy_unchecked(probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub beta1: f64,
    pub beta2: f64,
}

impl FusionWeights {
    pub const DEFAULT_BOUND: f64 = 1.0;

    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        Self::bounded(beta1, beta2, Self::DEFAULT_BOUND)
    }

    pub fn bounded(beta1: f64, beta2: f64, bound: f64) -> Result<Self> {
        for b in [beta1, beta2] {
            if !(b > 0.0 && b <= bound) {
                return Err(Error::InvalidConfig(format!("β = {b} outside (0, {bound}]")));
            }
        }
        Ok(Self { beta1, beta2 })
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self { beta1: 1.0, beta2: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    /// `true` when the semantic beam is selected.
    pub omega: bool,
    pub beam: usize,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Applies the strict rule `ω = 1 ⇔ β₁α₁ < β₂α₂`. A missing semantic
/// prediction (no detection) counts as uniform.
pub fn fuse(semantic: Option<&Prediction>, transformer: &Prediction, w: FusionWeights) -> FusionDecision {
    let (alpha1, sem_beam) = match semantic {
        Some(p) => (p.entropy, p.argmax),
        None => ((transformer.probs.len() as f64).ln(), 0),
    };
    let alpha2 = transformer.entropy;
    let omega = w.beta1 * alpha1 < w.beta2 * alpha2;
    FusionDecision {
        omega,
        beam: if omega { sem_beam } else { transformer.argmax },
        alpha1,
        alpha2,
    }
}

/// Ranked beams of whichever model the decision selected.
pub fn fused_ranking(decision: &FusionDecision, semantic: Option<&Prediction>, transformer: &Prediction) -> Vec<usize> {
    match (decision.omega, semantic) {
        (true, Some(p)) => p.ranked(),
        (true, None) => Prediction::uniform(transformer.probs.len()).ranked(),
        (false, _) => transformer.ranked(),
    }
}

/// The β values scanned: `min, min + step, …, max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self {
            min: 0.01,
            max: 1.0,
            step: 0.01,
        }
    }
}

impl BetaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let span = (self.max - self.min) / self.step;
        if !(self.min > 0.0 && self.max >= self.min && self.step > 0.0) || (span - span.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "β grid [{}, {}] step {} does not tile the range",
                self.min, self.max, self.step
            )));
        }
        let n = span.round() as usize + 1;
        Ok((0..n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

/// What the grid search needs per validation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSample {
    pub semantic: Option<Prediction>,
    pub transformer: Prediction,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub beta1: f64,
    pub beta2: f64,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSearch {
    pub weights: FusionWeights,
    /// Top-1 accuracy (%) at the chosen weights.
    pub top1: f64,
    pub surface: Vec<SurfacePoint>,
}

/// Exhaustive scan; ties keep the smaller β₁, then the smaller β₂.
pub fn grid_search_betas(samples: &[FusionSample], grid: &BetaGrid) -> Result<BetaSearch> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let values = grid.values()?;
    let pre: Vec<(f64, f64, bool, bool)> = samples
        .iter()
        .map(|s| {
            let d = fuse(s.semantic.as_ref(), &s.transformer, FusionWeights::default());
            let sem_ok = s.semantic.as_ref().is_some_and(|p| p.argmax == s.label);
            (d.alpha1, d.alpha2, sem_ok, s.transformer.argmax == s.label)
        })
        .collect();

    let mut surface = Vec::with_capacity(values.len() * values.len());
    let mut best: Option<(FusionWeights, usize)> = None;
    for &b1 in &values {
        for &b2 in &values {
            let hits = pre
                .iter()
                .filter(|&&(a1, a2, sem_ok, trn_ok)| if b1 * a1 < b2 * a2 { sem_ok } else { trn_ok })
                .count();
            surface.push(SurfacePoint {
                beta1: b1,
                beta2: b2,
                top1: 100.0 * hits as f64 / samples.len() as f64,
            });
            if best.is_none_or(|(_, h)| hits > h) {
                best = Some((FusionWeights { beta1: b1, beta2: b2 }, hits));
            }
        }
    }
    let (weights, hits) = best.expect("grid is non-empty");
    Ok(BetaSearch {
        weights,
        top1: 100.0 * hits as f64 / samples.len() as f64,
        surface,
    })
}

pub fn write_surface_csv(path: &Path, surface: &[SurfacePoint]) -> Result<()> {
    let err = |e: csv::Error| Error::Malformed {
        what: "surface csv",
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for p in surface {
        w.serialize(p).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred_with_entropy(n: usize, argmax: usize, mass: f64) -> Prediction {
        let rest = (1.0 - mass) / (n - 1) as f64;
        let mut probs = vec![rest; n];
        probs[argmax] = mass;
        Prediction::from_probs(probs)
    }

    #[test]
    fn entropy_values() {
        let mut one_hot = vec![0.0; 64];
        one_hot[7] = 1.0;
        assert_eq!(entropy(&one_hot).unwrap(), 0.0);
        assert!((entropy(&[1.0 / 64.0; 64]).unwrap() - 4.158883083359672).abs() < 1e-12);
        let mut half = vec![0.0; 64];
        half[0] = 0.5;
        half[1] = 0.5;
        assert!((entropy(&half).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
        assert!(entropy(&[]).is_err());
    }

    fn decision(a1: f64, a2: f64, b1: f64, b2: f64) -> bool {
        b1 * a1 < b2 * a2
    }

    #[test]
    fn strict_inequality_examples() {
        assert!(decision(1.0, 2.0, 1.0, 1.0));
        assert!(!decision(1.0, 2.0, 0.5, 0.1));
        let sem = pred_with_entropy(64, 3, 0.9);
        let trn = pred_with_entropy(64, 9, 0.5);
        let d = fuse(Some(&sem), &trn, FusionWeights::new(1.0, 1.0).unwrap());
        assert!(d.omega && d.beam == 3);
        let d = fuse(Some(&sem), &trn, FusionWeights::new(1.0, 0.01).unwrap());
        assert!(!d.omega && d.beam == 9);
        // tie goes to the transformer
        let d = fuse(Some(&trn), &trn, FusionWeights::default());
        assert!(!d.omega);
    }

    #[test]
    fn no_detection_falls_back() {
        let trn = pred_with_entropy(64, 12, 0.3);
        for b in [0.01, 0.5, 1.0] {
            let d = fuse(None, &trn, FusionWeights::new(b, b).unwrap());
            assert!(!d.omega);
            assert_eq!(d.beam, 12);
            assert!((d.alpha1 - 64f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_validated() {
        assert!(FusionWeights::new(0.0, 0.5).is_err());
        assert!(FusionWeights::new(0.5, 1.01).is_err());
        assert!(FusionWeights::bounded(2.0, 1.5, 2.0).is_ok());
    }

    #[test]
    fn grid_values() {
        let v = BetaGrid::default().values().unwrap();
        assert_eq!(v.len(), 100);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[99], 1.0);
        assert_eq!(v[5], 0.06);
        assert!(BetaGrid {
            min: 0.01,
            max: 1.0,
            step: 0.3
        }
        .values()
        .is_err());
    }

    #[test]
    fn dominant_semantic_picks_smallest_beta1() {
        let samples: Vec<FusionSample> = (0..10)
            .map(|i| FusionSample {
                semantic: Some(pred_with_entropy(64, i, 0.95)),
                transformer: pred_with_entropy(64, (i + 1) % 64, 0.4),
                label: i,
            })
            .collect();
        let r = grid_search_betas(&samples, &BetaGrid::default()).unwrap();
        assert_eq!(r.weights.beta1, 0.01);
        assert_eq!(r.weights.beta2, 0.01);
        assert_eq!(r.top1, 100.0);
        assert_eq!(r.surface.len(), 10_000);
    }

    #[test]
    fn identical_models_give_flat_surface() {
        let samples: Vec<FusionSample> = (0..6)
            .map(|i| {
                let p = pred_with_entropy(64, i % 3, 0.6);
                FusionSample {
                    semantic: Some(p.clone()),
                    transformer: p,
                    label: i % 2,
                }
            })
            .collect();
        let r = grid_search_betas(&samples, &BetaGrid::default()).unwrap();
        assert!(r.surface.iter().all(|s| s.top1 == r.surface[0].top1));
        assert_eq!((r.weights.beta1, r.weights.beta2), (0.01, 0.01));
    }

    #[test]
    fn toy_grid_matches_enumeration() {
        // α₁ / α₂ and correctness per sample
        let table = [
            (0.5, 1.0, true, false),
            (2.0, 1.0, false, true),
            (1.0, 1.5, false, true),
        ];
        let samples: Vec<FusionSample> = table
            .iter()
            .map(|&(m1, m2, sem_ok, trn_ok)| {
                let sem = pred_with_entropy(4, 0, 1.0 - m1 / 4.0);
                let trn = pred_with_entropy(4, 1, 1.0 - m2 / 4.0);
                FusionSample {
                    label: if sem_ok {
                        0
                    } else if trn_ok {
                        1
                    } else {
                        2
                    },
                    semantic: Some(sem),
                    transformer: trn,
                }
            })
            .collect();
        let grid = BetaGrid {
            min: 0.5,
            max: 1.0,
            step: 0.5,
        };
        let r = grid_search_betas(&samples, &grid).unwrap();
        let mut expect = Vec::new();
        for b1 in [0.5, 1.0] {
            for b2 in [0.5, 1.0] {
                let hits = samples
                    .iter()
                    .filter(|s| {
                        let a1 = s.semantic.as_ref().unwrap().entropy;
                        let a2 = s.transformer.entropy;
                        let chosen = if b1 * a1 < b2 * a2 { 0 } else { 1 };
                        chosen == s.label
                    })
                    .count();
                expect.push(100.0 * hits as f64 / 3.0);
            }
        }
        let got: Vec<f64> = r.surface.iter().map(|p| p.top1).collect();
        assert_eq!(got, expect);
        let best = expect.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(r.top1, best);
        assert!(grid_search_betas(&[], &grid).is_err());
    }
}
