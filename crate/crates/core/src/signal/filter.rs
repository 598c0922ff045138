//! IIR preprocessing filters: Butterworth high/low-pass and a 60 Hz notch.
//!
//! All filters are cascades of biquads, run causally with zero initial state.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

pub const HIGHPASS_HZ: f64 = 1.6;
pub const LOWPASS_HZ: f64 = 50.0;
pub const BUTTERWORTH_ORDER: usize = 4;
pub const NOTCH_HZ: f64 = 60.0;
pub const NOTCH_Q: f64 = 20.0;

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Complex response at `freq_hz` for sample rate `fs`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }
}

/// Cascade of biquads (second-order sections).
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

#[derive(Debug, Clone, Copy)]
pub enum Band {
    Lowpass,
    Highpass,
}

impl SosFilter {
    /// Butterworth design of even `order`, bilinear transform with the
    /// cutoff prewarped so the digital -3 dB point lands on `cutoff_hz`.
    pub fn butterworth(order: usize, cutoff_hz: f64, fs: f64, band: Band) -> Self {
        assert!(order >= 2 && order.is_multiple_of(2), "order must be even");
        assert!(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0, "cutoff must be below Nyquist");
        let w = (PI * cutoff_hz / fs).tan();
        let w2 = w * w;
        let sections = (0..order / 2)
            .map(|k| {
                // s^2 + q s + 1 is the k-th conjugate-pole factor of the
                // normalized analog prototype.
                let q = 2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).sin();
                let a0 = 1.0 + q * w + w2;
                let a = [2.0 * (w2 - 1.0) / a0, (1.0 - q * w + w2) / a0];
                let b = match band {
                    Band::Lowpass => [w2 / a0, 2.0 * w2 / a0, w2 / a0],
                    Band::Highpass => [1.0 / a0, -2.0 / a0, 1.0 / a0],
                };
                Biquad { b, a }
            })
            .collect();
        SosFilter { sections }
    }

    /// Second-order notch at `center_hz` with quality factor `q`.
    pub fn notch(center_hz: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / fs;
        let bandwidth = w0 / q;
        let gain = 1.0 / (1.0 + (bandwidth / 2.0).tan());
        let c = w0.cos();
        SosFilter {
            sections: vec![Biquad {
                b: [gain, -2.0 * gain * c, gain],
                a: [-2.0 * gain * c, 2.0 * gain - 1.0],
            }],
        }
    }

    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(freq_hz, fs))
            .product()
    }

    /// Causal filtering, transposed direct form II per section.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for x in out.iter_mut() {
                let y = s.b[0] * *x + z1;
                z1 = s.b[1] * *x - s.a[0] * y + z2;
                z2 = s.b[2] * *x - s.a[1] * y;
                *x = y;
            }
        }
        out
    }
}

fn check_finite(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("input sample {i}"))),
        None => Ok(()),
    }
}

/// 4th-order Butterworth high-pass at 1.6 Hz followed by 4th-order low-pass at 50 Hz.
pub fn bandpass_filter(samples: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    if !(sample_rate > 2.0 * LOWPASS_HZ) {
        return Err(Error::UnsupportedSampleRate(sample_rate));
    }
    if samples.len() < 16 {
        return Err(Error::InvalidInput(format!(
            "bandpass filter needs at least 16 samples, got {}",
            samples.len()
        )));
    }
    check_finite(samples)?;
    let hp = SosFilter::butterworth(BUTTERWORTH_ORDER, HIGHPASS_HZ, sample_rate, Band::Highpass);
    let lp = SosFilter::butterworth(BUTTERWORTH_ORDER, LOWPASS_HZ, sample_rate, Band::Lowpass);
    Ok(lp.apply(&hp.apply(samples)))
}

/// 60 Hz notch with Q = 20. Identity when 60 Hz is not below Nyquist.
pub fn notch_filter(samples: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    check_finite(samples)?;
    if sample_rate <= 2.0 * NOTCH_HZ {
        return Ok(samples.to_vec());
    }
    Ok(SosFilter::notch(NOTCH_HZ, NOTCH_Q, sample_rate).apply(samples))
}
