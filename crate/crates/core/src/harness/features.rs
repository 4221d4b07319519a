//! Model inputs derived from a dataset split.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::localization::{localize_target, KnowledgeBase, Standardizer};
use crate::neural::{LeNetInput, Sequence};
use crate::scene::dataset::{load_sample, FrameRecord};

/// `(standardized long, standardized lat, previous beam / N)`.
pub fn transformer_step(standardizer: &Standardizer, record: &FrameRecord, num_beams: usize) -> [f64; 3] {
    let [x, y] = standardizer.transform(record.gps());
    [x, y, record.prev_label as f64 / num_beams as f64]
}

/// For every record, the frames of its episode with step in
/// `(step − seq_len, step]`, oldest first.
pub fn sequences_for(
    records: &[FrameRecord],
    standardizer: &Standardizer,
    seq_len: usize,
    num_beams: usize,
) -> Vec<Sequence> {
    let index: BTreeMap<(u64, u32), usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.episode, r.step), i))
        .collect();
    records
        .iter()
        .map(|r| {
            let first = r.step.saturating_sub(seq_len as u32 - 1);
            let steps: Vec<[f64; 3]> = (first..=r.step)
                .filter_map(|s| index.get(&(r.episode, s)))
                .map(|&i| transformer_step(standardizer, &records[i], num_beams))
                .collect();
            Sequence::from_steps(&steps)
        })
        .collect()
}

pub(crate) struct FrameInputs {
    /// Downscaled localized target mask; `None` when no detection fell in the window.
    pub semantic: Option<LeNetInput>,
    /// Downscaled all-vehicle mask.
    pub full: LeNetInput,
    /// Whether localization picked the true target.
    pub hit: bool,
    pub latency: Duration,
}

pub(crate) fn frame_inputs(
    dir: &Path,
    records: &[FrameRecord],
    kb: &KnowledgeBase,
    side: usize,
) -> Result<Vec<FrameInputs>> {
    records
        .iter()
        .map(|r| {
            let sample = load_sample(dir, r.clone())?;
            let start = Instant::now();
            let located = localize_target(&sample.detections, &sample.mask, kb, r.gps());
            let latency = start.elapsed();
            let (semantic, hit) = match located {
                Ok(t) => (
                    Some(LeNetInput::from_image(&t.mask.downsample_any(side, side))),
                    sample.detections[t.selected].vehicle_id == Some(r.target_id),
                ),
                Err(Error::NoDetectionInWindow) => (None, false),
                Err(e) => return Err(e),
            };
            Ok(FrameInputs {
                semantic,
                full: LeNetInput::from_image(&sample.mask.downsample_any(side, side)),
                hit,
                latency,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(episode: u64, step: u32, prev: usize) -> FrameRecord {
        FrameRecord {
            frame_id: episode * 100 + step as u64,
            episode,
            step,
            gps_long: step as f64,
            gps_lat: -(step as f64),
            target_id: 0,
            target_azimuth: 0.0,
            label: 0,
            prev_label: prev,
            corruption: "clear".into(),
            mask_path: String::new(),
            detections: String::new(),
        }
    }

    #[test]
    fn sequences_stay_within_episode() {
        let records: Vec<FrameRecord> = (0..5)
            .map(|s| rec(1, s, 8))
            .chain((0..3).map(|s| rec(2, s, 16)))
            .collect();
        let st = Standardizer {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        };
        let seqs = sequences_for(&records, &st, 3, 64);
        assert_eq!(
            seqs.iter().map(|s| s.len()).collect::<Vec<_>>(),
            vec![1, 2, 3, 3, 3, 1, 2, 3]
        );
        assert_eq!(seqs[4].step(0), &[2.0, -2.0, 0.125]);
        assert_eq!(seqs[4].step(2), &[4.0, -4.0, 0.125]);
        assert_eq!(seqs[7].step(0), &[0.0, 0.0, 0.25]);
        let single = sequences_for(&records, &st, 1, 64);
        assert!(single.iter().all(|s| s.len() == 1));
    }
}
