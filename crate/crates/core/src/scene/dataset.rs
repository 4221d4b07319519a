//! On-disk dataset: `manifest.csv` plus one binary PGM mask per frame.
//!
//! Detections are stored as `x_min y_min x_max y_max id` groups separated by
//! `;`, with `-` for an unknown vehicle id.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BBox, BinaryImage, Detection, Frame};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub episode: u64,
    pub step: u32,
    pub gps_long: f64,
    pub gps_lat: f64,
    pub target_id: u32,
    pub target_azimuth: f64,
    pub label: usize,
    pub prev_label: usize,
    pub corruption: String,
    pub mask_path: String,
    pub detections: String,
}

impl FrameRecord {
    pub fn from_frame(frame: &Frame, mask_path: String) -> Self {
        let target = frame.target();
        Self {
            frame_id: frame.id,
            episode: frame.episode,
            step: frame.step,
            gps_long: target.gps[0],
            gps_lat: target.gps[1],
            target_id: target.id,
            target_azimuth: frame.target_azimuth,
            label: frame.ground_truth_beam,
            prev_label: frame.previous_beam,
            corruption: frame.corruption.clone(),
            mask_path,
            detections: encode_detections(&frame.detections),
        }
    }

    pub fn gps(&self) -> [f64; 2] {
        [self.gps_long, self.gps_lat]
    }

    pub fn parsed_detections(&self) -> Result<Vec<Detection>> {
        decode_detections(&self.detections)
    }
}

pub fn encode_detections(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| {
            let b = d.bbox;
            let id = d.vehicle_id.map_or_else(|| "-".to_string(), |v| v.to_string());
            format!("{} {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max, id)
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn decode_detections(text: &str) -> Result<Vec<Detection>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|group| {
            let bad = || Error::Malformed {
                what: "detection list",
                detail: format!("bad entry `{group}`"),
            };
            let parts: Vec<&str> = group.split(' ').collect();
            if parts.len() != 5 {
                return Err(bad());
            }
            let n = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let vehicle_id = match parts[4] {
                "-" => None,
                s => Some(s.parse::<u32>().map_err(|_| bad())?),
            };
            Ok(Detection {
                bbox: BBox::new(n(parts[0])?, n(parts[1])?, n(parts[2])?, n(parts[3])?),
                vehicle_id,
            })
        })
        .collect()
}

/// A manifest row with its mask loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record: FrameRecord,
    pub detections: Vec<Detection>,
    pub mask: BinaryImage,
}

impl Sample {
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            record: FrameRecord::from_frame(frame, String::new()),
            detections: frame.detections.clone(),
            mask: frame.full_mask.clone(),
        }
    }

    pub fn target_detection(&self) -> Option<usize> {
        self.detections
            .iter()
            .position(|d| d.vehicle_id == Some(self.record.target_id))
    }
}

/// Streams frames to a split directory; the manifest is written on `finish`.
pub struct DatasetWriter {
    dir: PathBuf,
    records: Vec<FrameRecord>,
}

impl DatasetWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, frame: &Frame) -> Result<()> {
        let rel = format!("masks/{:08}.pgm", frame.id);
        frame.full_mask.save_pgm(&self.dir.join(&rel))?;
        self.records.push(FrameRecord::from_frame(frame, rel));
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<FrameRecord>> {
        write_manifest(&self.dir.join(MANIFEST), &self.records)?;
        Ok(self.records)
    }
}

pub fn write_manifest(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<FrameRecord>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(&path, e)))
        .collect()
}

pub fn load_sample(dir: &Path, record: FrameRecord) -> Result<Sample> {
    let mask = BinaryImage::load_pgm(&dir.join(&record.mask_path))?;
    let detections = record.parsed_detections()?;
    Ok(Sample {
        record,
        detections,
        mask,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Malformed {
        what: "manifest",
        detail: format!("{}: {e}", path.display()),
    }
}
