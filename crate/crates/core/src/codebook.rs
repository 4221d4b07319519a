//! Analog beamforming codebook for a uniform linear array.
//!
//! Beam `i` steers toward the quantized azimuth `ρ_i` and has elements
//! `x_i[k] = exp(j·k·(2π/μ)·s·sin ρ_i) / √K` for `k = 0..K`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s, used to derive the carrier wavelength.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub num_antennas: usize,
    pub num_beams: usize,
    /// Inter-element spacing in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
}

impl CodebookConfig {
    /// Half-wavelength ULA over the full `[−π/2, π/2]` azimuth range.
    pub fn half_wavelength(num_antennas: usize, num_beams: usize, carrier_hz: f64) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_hz;
        Self {
            num_antennas,
            num_beams,
            spacing: wavelength / 2.0,
            wavelength,
            azimuth_min: -FRAC_PI_2,
            azimuth_max: FRAC_PI_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::InvalidConfig("num_antennas must be >= 1".into()));
        }
        if self.num_beams == 0 {
            return Err(Error::InvalidConfig("num_beams must be >= 1".into()));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::InvalidConfig("spacing must be positive".into()));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::InvalidConfig("wavelength must be positive".into()));
        }
        let (lo, hi) = (self.azimuth_min, self.azimuth_max);
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi || lo < -FRAC_PI_2 || hi > FRAC_PI_2 {
            return Err(Error::InvalidConfig(format!(
                "azimuth range [{lo}, {hi}] must be a non-empty subset of [-pi/2, pi/2]"
            )));
        }
        Ok(())
    }

    /// Cell-centered quantized azimuth of beam `i`.
    pub fn quantized_azimuth(&self, i: usize) -> f64 {
        let width = (self.azimuth_max - self.azimuth_min) / self.num_beams as f64;
        self.azimuth_min + (i as f64 + 0.5) * width
    }

    fn check_azimuth(&self, azimuth: f64) -> Result<()> {
        if !(azimuth >= self.azimuth_min && azimuth <= self.azimuth_max) {
            return Err(Error::AzimuthOutOfRange {
                azimuth,
                min: self.azimuth_min,
                max: self.azimuth_max,
            });
        }
        Ok(())
    }
}

impl Default for CodebookConfig {
    /// 16 antennas, 64 beams, 60 GHz carrier.
    fn default() -> Self {
        Self::half_wavelength(16, 64, 60e9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingVector {
    pub index: usize,
    pub azimuth: f64,
    pub elements: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    config: CodebookConfig,
    beams: Vec<BeamformingVector>,
}

/// ULA response at `azimuth` without the range check.
fn ula_response(config: &CodebookConfig, azimuth: f64) -> Vec<Complex64> {
    let k = config.num_antennas;
    let scale = 1.0 / (k as f64).sqrt();
    let step = (2.0 * PI / config.wavelength) * config.spacing * azimuth.sin();
    (0..k)
        .map(|n| {
            let phase = n as f64 * step;
            Complex64::new(scale * phase.cos(), scale * phase.sin())
        })
        .collect()
}

pub fn steering_vector(config: &CodebookConfig, azimuth: f64) -> Result<Vec<Complex64>> {
    config.validate()?;
    config.check_azimuth(azimuth)?;
    Ok(ula_response(config, azimuth))
}

pub fn generate_codebook(config: &CodebookConfig) -> Result<Codebook> {
    config.validate()?;
    let beams = (0..config.num_beams)
        .map(|index| {
            let azimuth = config.quantized_azimuth(index);
            BeamformingVector {
                index,
                azimuth,
                elements: ula_response(config, azimuth),
            }
        })
        .collect();
    Ok(Codebook { config: *config, beams })
}

/// Conjugate inner product `Σ conj(a_k)·b_k`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl Codebook {
    pub fn new(config: &CodebookConfig) -> Result<Self> {
        generate_codebook(config)
    }

    pub fn config(&self) -> &CodebookConfig {
        &self.config
    }

    pub fn beams(&self) -> &[BeamformingVector] {
        &self.beams
    }

    pub fn beam(&self, i: usize) -> Option<&BeamformingVector> {
        self.beams.get(i)
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CodebookDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CodebookDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeamDoc {
    index: usize,
    azimuth: f64,
    /// Interleaved `re, im` pairs.
    elements: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDoc {
    config: CodebookConfig,
    beams: Vec<BeamDoc>,
}

impl From<&Codebook> for CodebookDoc {
    fn from(cb: &Codebook) -> Self {
        Self {
            config: cb.config,
            beams: cb
                .beams
                .iter()
                .map(|b| BeamDoc {
                    index: b.index,
                    azimuth: b.azimuth,
                    elements: b.elements.iter().flat_map(|c| [c.re, c.im]).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<CodebookDoc> for Codebook {
    type Error = Error;

    fn try_from(doc: CodebookDoc) -> Result<Self> {
        doc.config.validate()?;
        let k = doc.config.num_antennas;
        if doc.beams.len() != doc.config.num_beams {
            return Err(Error::DimensionMismatch {
                expected: doc.config.num_beams,
                got: doc.beams.len(),
            });
        }
        let mut beams = Vec::with_capacity(doc.beams.len());
        for b in doc.beams {
            if b.elements.len() != 2 * k {
                return Err(Error::DimensionMismatch {
                    expected: 2 * k,
                    got: b.elements.len(),
                });
            }
            let elements = b.elements.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            beams.push(BeamformingVector {
                index: b.index,
                azimuth: b.azimuth,
                elements,
            });
        }
        if beams.windows(2).any(|w| w[0].azimuth >= w[1].azimuth) {
            return Err(Error::Malformed {
                what: "codebook",
                detail: "beams must be sorted by strictly increasing azimuth".into(),
            });
        }
        Ok(Codebook {
            config: doc.config,
            beams,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_setup() -> Codebook {
        generate_codebook(&CodebookConfig::default()).unwrap()
    }

    #[test]
    fn element_magnitudes_and_norms() {
        let cb = default_setup();
        assert_eq!(cb.len(), 64);
        for b in cb.beams() {
            assert_eq!(b.elements.len(), 16);
            for e in &b.elements {
                assert!((e.norm() - 0.25).abs() < 1e-12);
            }
            let norm: f64 = b.elements.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert_eq!(b.elements[0], Complex64::new(0.25, 0.0));
        }
    }

    #[test]
    fn wavelength_for_60ghz() {
        let cfg = CodebookConfig::default();
        assert!((cfg.wavelength - 0.004_996_540_966_666_667).abs() < 1e-15);
        assert_eq!(cfg.spacing, cfg.wavelength / 2.0);
    }

    #[test]
    fn boresight_beam_is_flat() {
        // Even N has no beam at exactly 0; use N = 63 whose middle cell is centered at 0.
        let mut cfg = CodebookConfig::default();
        cfg.num_beams = 63;
        let cb = generate_codebook(&cfg).unwrap();
        let mid = &cb.beams()[31];
        assert!(mid.azimuth.abs() < 1e-15);
        let sv = steering_vector(&cfg, 0.0).unwrap();
        assert!(sv.iter().all(|e| *e == Complex64::new(0.25, 0.0)));
    }

    #[test]
    fn steering_matches_beams_exactly() {
        let cb = default_setup();
        for b in cb.beams() {
            let sv = steering_vector(cb.config(), b.azimuth).unwrap();
            assert_eq!(sv, b.elements);
            assert!((inner(&sv, &b.elements).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_beams_are_not_parallel() {
        let cb = default_setup();
        for (i, a) in cb.beams().iter().enumerate() {
            for b in &cb.beams()[i + 1..] {
                assert!(inner(&a.elements, &b.elements).norm() < 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn negated_azimuth_conjugates() {
        let cfg = CodebookConfig::default();
        for az in [0.1, 0.7, 1.3, FRAC_PI_2] {
            let p = steering_vector(&cfg, az).unwrap();
            let n = steering_vector(&cfg, -az).unwrap();
            for (a, b) in p.iter().zip(&n) {
                assert_eq!(*b, a.conj());
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = CodebookConfig::default();
        let mut bad = base;
        bad.num_antennas = 0;
        assert!(matches!(generate_codebook(&bad), Err(Error::InvalidConfig(_))));
        let mut bad = base;
        bad.num_beams = 0;
        assert!(generate_codebook(&bad).is_err());
        let mut bad = base;
        bad.spacing = -1.0;
        assert!(generate_codebook(&bad).is_err());
        let mut bad = base;
        bad.wavelength = 0.0;
        assert!(generate_codebook(&bad).is_err());
        let mut bad = base;
        bad.azimuth_max = 2.0;
        assert!(generate_codebook(&bad).is_err());
    }

    #[test]
    fn steering_outside_range_errors() {
        let mut cfg = CodebookConfig::default();
        cfg.azimuth_min = -0.5;
        cfg.azimuth_max = 0.5;
        assert!(matches!(
            steering_vector(&cfg, 0.6),
            Err(Error::AzimuthOutOfRange { .. })
        ));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        assert_eq!(default_setup(), default_setup());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let cb = default_setup();
        let text = cb.to_json().unwrap();
        let back = Codebook::from_json(&text).unwrap();
        for (a, b) in cb.beams().iter().zip(back.beams()) {
            assert_eq!(a.azimuth.to_bits(), b.azimuth.to_bits());
            for (x, y) in a.elements.iter().zip(&b.elements) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
        assert_eq!(back.to_json().unwrap(), text);
    }
}
