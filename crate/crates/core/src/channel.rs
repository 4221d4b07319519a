//! Narrowband multipath channel, received SNR and the exhaustive-search oracle.
//!
//! Elevation only enters through a `cos(elevation)` factor on the path gain,
//! since the ULA response depends on azimuth alone. Subcarrier `q > 0` rotates
//! every path by a seeded phase; subcarrier 0 is unrotated.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codebook::{inner, steering_vector, BeamformingVector, Codebook, CodebookConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub gain: Complex64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl PathComponent {
    pub fn los(azimuth: f64) -> Self {
        Self {
            gain: Complex64::new(1.0, 0.0),
            azimuth,
            elevation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub paths: Vec<PathComponent>,
    pub subcarriers: usize,
    pub seed: u64,
}

impl ChannelState {
    pub fn single_path(path: PathComponent) -> Self {
        Self {
            paths: vec![path],
            subcarriers: 1,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::EmptyChannel);
        }
        if self.subcarriers == 0 {
            return Err(Error::InvalidConfig("subcarriers must be >= 1".into()));
        }
        if self
            .paths
            .iter()
            .any(|p| !(p.gain.re.is_finite() && p.gain.im.is_finite()))
        {
            return Err(Error::InvalidInput("path gain must be finite".into()));
        }
        Ok(())
    }

    /// Phase rotation of path `z` on subcarrier `q`.
    fn subcarrier_phase(&self, z: usize, q: usize) -> f64 {
        if q == 0 {
            return 0.0;
        }
        let mix = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((z as u64) << 32 | q as u64);
        ChaCha8Rng::seed_from_u64(mix).random_range(0.0..2.0 * PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub symbol_power: f64,
    pub noise_variance: f64,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_power > 0.0 && self.noise_variance > 0.0) {
            return Err(Error::InvalidConfig(
                "symbol_power and noise_variance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn snr(&self) -> f64 {
        self.symbol_power / self.noise_variance
    }
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            symbol_power: 1.0,
            noise_variance: 1e-3,
        }
    }
}

pub fn channel_vector(state: &ChannelState, config: &CodebookConfig, subcarrier: usize) -> Result<Vec<Complex64>> {
    state.validate()?;
    if subcarrier >= state.subcarriers {
        return Err(Error::SubcarrierOutOfRange {
            index: subcarrier,
            count: state.subcarriers,
        });
    }
    let mut h = vec![Complex64::new(0.0, 0.0); config.num_antennas];
    for (z, path) in state.paths.iter().enumerate() {
        let response = steering_vector(config, path.azimuth)?;
        let gain = path.gain * path.elevation.cos() * Complex64::from_polar(1.0, state.subcarrier_phase(z, subcarrier));
        for (acc, a) in h.iter_mut().zip(&response) {
            *acc += gain * a;
        }
    }
    Ok(h)
}

/// `(P/σ²)·|⟨h, x⟩|²`.
pub fn received_power(h: &[Complex64], beam: &BeamformingVector, radio: &RadioParams) -> Result<f64> {
    if h.len() != beam.elements.len() {
        return Err(Error::DimensionMismatch {
            expected: beam.elements.len(),
            got: h.len(),
        });
    }
    Ok(radio.snr() * inner(h, &beam.elements).norm_sqr())
}

fn subcarrier_vectors(state: &ChannelState, config: &CodebookConfig) -> Result<Vec<Vec<Complex64>>> {
    (0..state.subcarriers)
        .map(|q| channel_vector(state, config, q))
        .collect()
}

fn mean_power(hs: &[Vec<Complex64>], beam: &BeamformingVector, radio: &RadioParams) -> Result<f64> {
    let mut total = 0.0;
    for h in hs {
        total += received_power(h, beam, radio)?;
    }
    Ok(total / hs.len() as f64)
}

pub fn average_rate(
    state: &ChannelState,
    config: &CodebookConfig,
    beam: &BeamformingVector,
    radio: &RadioParams,
) -> Result<f64> {
    let hs = subcarrier_vectors(state, config)?;
    mean_power(&hs, beam, radio)
}

/// Average rate of every beam, in slice order.
pub fn beam_rates(
    state: &ChannelState,
    config: &CodebookConfig,
    beams: &[BeamformingVector],
    radio: &RadioParams,
) -> Result<Vec<f64>> {
    let hs = subcarrier_vectors(state, config)?;
    beams.iter().map(|b| mean_power(&hs, b, radio)).collect()
}

/// Exhaustive scan over `beams`; returns the slice position of the best beam.
/// Ties go to the earlier position.
pub fn optimal_beam_in(
    state: &ChannelState,
    config: &CodebookConfig,
    beams: &[BeamformingVector],
    radio: &RadioParams,
) -> Result<(usize, f64)> {
    if beams.is_empty() {
        return Err(Error::InvalidInput("empty codebook".into()));
    }
    let rates = beam_rates(state, config, beams, radio)?;
    let mut best = (0, rates[0]);
    for (i, &r) in rates.iter().enumerate().skip(1) {
        if r > best.1 {
            best = (i, r);
        }
    }
    Ok(best)
}

pub fn optimal_beam(state: &ChannelState, codebook: &Codebook, radio: &RadioParams) -> Result<(usize, f64)> {
    optimal_beam_in(state, codebook.config(), codebook.beams(), radio)
}

/// One noisy received sample `τ = ⟨h, x⟩·δ + y` with `y ~ CN(0, σ²)`.
pub fn received_sample<R: Rng + ?Sized>(
    h: &[Complex64],
    beam: &BeamformingVector,
    symbol: Complex64,
    radio: &RadioParams,
    rng: &mut R,
) -> Result<Complex64> {
    if h.len() != beam.elements.len() {
        return Err(Error::DimensionMismatch {
            expected: beam.elements.len(),
            got: h.len(),
        });
    }
    let std = (radio.noise_variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Ok(inner(h, &beam.elements) * symbol + Complex64::new(re * std, im * std))
}
