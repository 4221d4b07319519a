//! Parametric sensing corruption. Only what the camera and GPS report is
//! perturbed; the physical channel and therefore the beam label are not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BBox, BinaryImage, Detection, Frame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionProfile {
    pub name: String,
    pub detection_drop_prob: f64,
    pub mask_flip_prob: f64,
    pub bbox_jitter_px: u32,
    /// Extra GPS noise, degrees (1σ per coordinate).
    pub gps_noise_std: f64,
}

impl CorruptionProfile {
    pub fn clear() -> Self {
        Self {
            name: "clear".into(),
            detection_drop_prob: 0.0,
            mask_flip_prob: 0.0,
            bbox_jitter_px: 0,
            gps_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.detection_drop_prob) || !unit(self.mask_flip_prob) {
            return Err(Error::InvalidConfig(format!(
                "preset {}: probabilities must lie in [0, 1]",
                self.name
            )));
        }
        if !(self.gps_noise_std >= 0.0 && self.gps_noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "preset {}: gps_noise_std must be non-negative",
                self.name
            )));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::InvalidConfig(format!("invalid preset name `{}`", self.name)));
        }
        Ok(())
    }
}

fn jitter<R: Rng>(b: BBox, px: u32, rows: usize, cols: usize, rng: &mut R) -> BBox {
    if px == 0 {
        return b;
    }
    let j = px as i64;
    let mut shift = |v: usize, hi: usize| (v as i64 + rng.random_range(-j..=j)).clamp(0, hi as i64) as usize;
    let x_min = shift(b.x_min, cols - 1);
    let y_min = shift(b.y_min, rows - 1);
    let x_max = shift(b.x_max, cols).max(x_min + 1);
    let y_max = shift(b.y_max, rows).max(y_min + 1);
    BBox::new(x_min, y_min, x_max, y_max)
}

/// Paste the content of `src_box` in `src` into `dst_box` of `dst`,
/// nearest-neighbour resampled (identity when the boxes match).
fn paste_resampled(src: &BinaryImage, src_box: &BBox, dst: &mut BinaryImage, dst_box: &BBox) {
    let (sh, sw) = (src_box.height(), src_box.width());
    let (dh, dw) = (dst_box.height(), dst_box.width());
    for r in 0..dh {
        let sr = src_box.y_min + r * sh / dh;
        for c in 0..dw {
            let sc = src_box.x_min + c * sw / dw;
            if src.get(sr, sc) {
                dst.set(dst_box.y_min + r, dst_box.x_min + c, true);
            }
        }
    }
}

pub fn corrupt(frame: &Frame, profile: &CorruptionProfile, seed: u64) -> Result<Frame> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (frame.full_mask.rows(), frame.full_mask.cols());

    let mut kept: Vec<(Detection, BBox)> = Vec::with_capacity(frame.detections.len());
    for det in &frame.detections {
        if rng.random::<f64>() < profile.detection_drop_prob {
            continue;
        }
        let moved = jitter(det.bbox, profile.bbox_jitter_px, rows, cols, &mut rng);
        kept.push((
            Detection {
                bbox: moved,
                vehicle_id: det.vehicle_id,
            },
            det.bbox,
        ));
    }

    let mut mask = BinaryImage::zeros(rows, cols);
    for (det, original) in &kept {
        paste_resampled(&frame.full_mask, original, &mut mask, &det.bbox);
    }

    if profile.mask_flip_prob > 0.0 {
        let mut visited = BinaryImage::zeros(rows, cols);
        for (det, _) in &kept {
            let b = det.bbox;
            for r in b.y_min..b.y_max {
                for c in b.x_min..b.x_max {
                    if visited.get(r, c) {
                        continue;
                    }
                    visited.set(r, c, true);
                    if rng.random::<f64>() < profile.mask_flip_prob {
                        mask.set(r, c, !mask.get(r, c));
                    }
                }
            }
        }
    }

    let mut vehicles = frame.vehicles.clone();
    if profile.gps_noise_std > 0.0 {
        let noise = Normal::new(0.0, profile.gps_noise_std).expect("validated std");
        for v in &mut vehicles {
            v.gps = [v.gps[0] + noise.sample(&mut rng), v.gps[1] + noise.sample(&mut rng)];
        }
    }

    Ok(Frame {
        vehicles,
        detections: kept.into_iter().map(|(d, _)| d).collect(),
        full_mask: mask,
        corruption: profile.name.clone(),
        ..frame.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RadioParams;
    use crate::codebook::{generate_codebook, CodebookConfig};
    use crate::scene::{generate_frame, WorldConfig};

    fn frame(seed: u64) -> Frame {
        let cb = generate_codebook(&CodebookConfig::default()).unwrap();
        generate_frame(&WorldConfig::default(), seed, &cb, &RadioParams::default()).unwrap()
    }

    fn profile(drop: f64, flip: f64, jit: u32, gps: f64) -> CorruptionProfile {
        CorruptionProfile {
            name: "test".into(),
            detection_drop_prob: drop,
            mask_flip_prob: flip,
            bbox_jitter_px: jit,
            gps_noise_std: gps,
        }
    }

    #[test]
    fn zero_profile_is_identity() {
        for seed in 0..10 {
            let f = frame(seed);
            let mut p = CorruptionProfile::clear();
            p.name = f.corruption.clone();
            assert_eq!(corrupt(&f, &p, 42).unwrap(), f);
        }
    }

    #[test]
    fn drop_all_blinds_camera() {
        let f = frame(3);
        let out = corrupt(&f, &profile(1.0, 0.3, 5, 0.0), 1).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.full_mask.count_ones(), 0);
        assert_eq!(out.ground_truth_beam, f.ground_truth_beam);
    }

    #[test]
    fn flip_fraction_concentrates() {
        let mut f = frame(5);
        let b = BBox::new(100, 100, 200, 200);
        f.detections = vec![Detection {
            bbox: b,
            vehicle_id: Some(0),
        }];
        f.full_mask = BinaryImage::zeros(540, 960);
        f.full_mask.fill_rect(&b);
        let out = corrupt(&f, &profile(0.0, 0.5, 0, 0.0), 77).unwrap();
        let flipped = 10_000 - out.full_mask.count_ones();
        let frac = flipped as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
        // nothing outside the box
        assert_eq!(out.full_mask.count_in(&b, 0, 960), out.full_mask.count_ones());
    }

    #[test]
    fn jitter_stays_in_bounds_and_labels_survive() {
        for seed in 0..20 {
            let f = frame(seed);
            let out = corrupt(&f, &profile(0.3, 0.1, 25, 1e-5), seed).unwrap();
            assert_eq!(out.ground_truth_beam, f.ground_truth_beam);
            assert_eq!(out.previous_beam, f.previous_beam);
            for d in &out.detections {
                assert!(d.bbox.fits(540, 960));
            }
            assert!(out.full_mask.as_slice().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn invalid_profile() {
        assert!(corrupt(&frame(0), &profile(1.5, 0.0, 0, 0.0), 0).is_err());
        assert!(corrupt(&frame(0), &profile(0.0, -0.1, 0, 0.0), 0).is_err());
    }
}
