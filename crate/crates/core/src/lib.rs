//! Hybrid mmWave beam selection for vehicle-to-infrastructure links.
//!
//! A base station with a uniform linear array picks one beam out of a fixed
//! codebook. Two lightweight classifiers propose a beam: a LeNet-style CNN
//! looking at a binary mask of the target vehicle (localized through a GPS
//! k-means knowledge base), and a small transformer over GPS fixes and the
//! previous beam. Their outputs are fused by comparing weighted prediction
//! entropies and scored against an exhaustive-search oracle.
//!
//! Module map:
//!
//! - [`codebook`]: ULA beamforming vectors and steering vectors.
//! - [`channel`]: multipath channel, received power, oracle beam.
//! - [`scene`]: synthetic frames, masks, corruption presets, dataset I/O.
//! - [`localization`]: GPS standardization, k-means knowledge base, windowed
//!   target selection.
//! - [`neural`]: from-scratch CNN and transformer classifiers with Adam.
//! - [`fusion`]: entropy fusion and weight grid search.
//! - [`metrics`]: Top-K accuracy, ACE score, power loss.
//! - [`harness`]: experiment configuration and the gen/train/betasearch/eval/report pipeline.

pub mod channel;
pub mod codebook;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod localization;
pub mod metrics;
pub mod neural;
pub mod scene;

pub use error::{Error, Result};
