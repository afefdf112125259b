//! Complex channel arithmetic for the multipath channel model.
//!
//! A channel is a discrete list of propagation paths, each with an attenuation,
//! a phase offset and a delay. Its frequency response at one subcarrier is the
//! phasor sum `H(f) = Σ α·exp(j(φ − 2πfτ))`; downstream code only consumes the
//! magnitude of that sum.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Number of receive antennas.
pub const ANTENNAS: usize = 3;
/// Number of OFDM subcarriers reported per antenna.
pub const SUBCARRIERS: usize = 114;
/// CSI packets grouped under one video frame.
pub const PACKETS_PER_FRAME: usize = 32;

/// One discrete propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    /// Real attenuation, unitless.
    pub alpha: f64,
    /// Phase offset in radians.
    pub phi: f64,
    /// Propagation delay in seconds.
    pub tau: f64,
}

impl PathComponent {
    pub fn new(alpha: f64, phi: f64, tau: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("path attenuation must be finite and >= 0, got {alpha}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("path delay must be finite and >= 0, got {tau}")));
        }
        if !phi.is_finite() {
            return Err(Error::Domain(format!("path phase must be finite, got {phi}")));
        }
        Ok(Self { alpha, phi, tau })
    }
}

/// Complex channel estimate at a single subcarrier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubcarrierSample {
    pub re: f64,
    pub im: f64,
}

impl SubcarrierSample {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    /// Phase angle. Not consumed downstream; the system is amplitude-only.
    pub fn phase(&self) -> f64 {
        self.im.atan2(self.re)
    }
}

impl std::ops::Add for SubcarrierSample {
    type Output = SubcarrierSample;

    fn add(self, rhs: Self) -> Self {
        SubcarrierSample::new(self.re + rhs.re, self.im + rhs.im)
    }
}

/// Magnitude of a complex channel sample.
pub fn amplitude(h: SubcarrierSample) -> f64 {
    (h.re * h.re + h.im * h.im).sqrt()
}

/// Frequency response of a discrete multipath channel at `freq_hz`.
pub fn superpose(paths: &[PathComponent], freq_hz: f64) -> Result<SubcarrierSample> {
    if paths.is_empty() {
        return Err(Error::Domain("no propagation paths".into()));
    }
    if !(freq_hz > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {freq_hz}")));
    }
    let mut acc = SubcarrierSample::default();
    for p in paths {
        let theta = p.phi - 2.0 * PI * freq_hz * p.tau;
        let (s, c) = theta.sin_cos();
        acc.re += p.alpha * c;
        acc.im += p.alpha * s;
    }
    Ok(acc)
}

/// Amplitude tensor of one video frame: `[antenna][subcarrier][packet]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    shape: [usize; 3],
    amplitudes: Vec<f64>,
}

impl CsiFrame {
    /// Frame with the default 3 × 114 × 32 layout.
    pub fn new(amplitudes: Vec<f64>) -> Result<Self> {
        Self::with_shape([ANTENNAS, SUBCARRIERS, PACKETS_PER_FRAME], amplitudes)
    }

    pub fn with_shape(shape: [usize; 3], amplitudes: Vec<f64>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if amplitudes.len() != n {
            return Err(Error::Shape(format!(
                "csi frame {:?} needs {n} amplitudes, got {}",
                shape,
                amplitudes.len()
            )));
        }
        if let Some(bad) = amplitudes.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Domain(format!("csi amplitude must be finite and >= 0, got {bad}")));
        }
        Ok(Self { shape, amplitudes })
    }

    pub fn zeros() -> Self {
        Self {
            shape: [ANTENNAS, SUBCARRIERS, PACKETS_PER_FRAME],
            amplitudes: vec![0.0; ANTENNAS * SUBCARRIERS * PACKETS_PER_FRAME],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.amplitudes
    }

    #[inline]
    pub fn get(&self, antenna: usize, subcarrier: usize, packet: usize) -> f64 {
        let [_, s, p] = self.shape;
        self.amplitudes[(antenna * s + subcarrier) * p + packet]
    }

    /// Multiply every amplitude by `k >= 0`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::with_shape(self.shape, self.amplitudes.iter().map(|a| a * k).collect())
    }
}
