//! Per-frame spectral band power and line-length features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::filter::{bandpass_filter, notch_filter};
use super::Recording;
use crate::error::{Error, Result};
use crate::montage::MontageGraph;

/// Length of a feature vector: four log band sums plus log line length.
pub const FEATURE_DIM: usize = 5;
pub type FeatureVector = [f64; FEATURE_DIM];

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["theta", "delta", "alpha", "beta", "loglinelength"];

/// Floor added inside every logarithm so silent windows stay finite.
pub const LOG_FLOOR: f64 = 1e-10;
pub const FRAME_LENGTH_SECONDS: f64 = 1.0;
pub const FRAME_STEP_SECONDS: f64 = 0.75;
pub const TUKEY_SHAPE: f64 = 0.25;

/// Half-open `[lo, hi)` bands in output order, labeled as in the source
/// description (theta below delta).
pub const BANDS_HZ: [(f64, f64); 4] = [(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0)];

/// Per-channel, per-frame feature vectors with frame timing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub channels: Vec<String>,
    /// `frames[channel][t]`, all channels with the same length.
    pub frames: Vec<Vec<FeatureVector>>,
    pub frame_start_seconds: Vec<f64>,
    pub frame_step_seconds: f64,
    pub frame_length_seconds: f64,
}

impl FeatureSeries {
    /// Builds a series with frames starting at `t * step`.
    pub fn new(channels: Vec<String>, frames: Vec<Vec<FeatureVector>>, step: f64, length: f64) -> Result<Self> {
        let n_frames = frames.first().map_or(0, Vec::len);
        let series = FeatureSeries {
            channels,
            frame_start_seconds: (0..n_frames).map(|t| t as f64 * step).collect(),
            frames,
            frame_step_seconds: step,
            frame_length_seconds: length,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.frames.len() {
            return Err(Error::InvalidInput(format!(
                "{} channel names for {} channels of frames",
                self.channels.len(),
                self.frames.len()
            )));
        }
        let n = self.n_frames();
        if n == 0 {
            return Err(Error::InvalidInput("feature series has no frames".into()));
        }
        for (name, rows) in self.channels.iter().zip(&self.frames) {
            if rows.len() != n {
                return Err(Error::InvalidInput(format!(
                    "channel `{name}` has {} frames, expected {n}",
                    rows.len()
                )));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of channel `{name}`")));
            }
        }
        if self.frame_start_seconds.len() != n {
            return Err(Error::InvalidInput("frame timestamps do not match frame count".into()));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// T + 1.
    pub fn n_frames(&self) -> usize {
        self.frame_start_seconds.len()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Subset/reorder channels to match `montage`.
    pub fn aligned_to(&self, montage: &MontageGraph) -> Result<FeatureSeries> {
        let frames = montage
            .channels()
            .iter()
            .map(|c| self.channel_index(c).map(|i| self.frames[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSeries {
            channels: montage.channels().to_vec(),
            frames,
            ..self.clone()
        })
    }
}

/// `log(eps + sum |s[i+1] - s[i]|)`.
pub fn log_line_length(window: &[f64]) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "line length needs at least 2 samples, got {}",
            window.len()
        )));
    }
    let total: f64 = window.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok((LOG_FLOOR + total).ln())
}

/// Tukey (tapered cosine) window; `shape` is the tapered fraction of the
/// whole window, split evenly between the two ends.
pub fn tukey_window(len: usize, shape: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    let taper = shape * m / 2.0;
    (0..len)
        .map(|n| {
            let x = n as f64;
            let edge = x.min(m - x);
            if shape <= 0.0 || edge >= taper {
                1.0
            } else {
                0.5 * (1.0 - (PI * edge / taper).cos())
            }
        })
        .collect()
}

/// Reusable band-power computation for a fixed window length.
pub struct BandPowerExtractor {
    sample_rate: f64,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    // (band, bin) membership for bins 0..=len/2
    band_bins: [Vec<usize>; 4],
}

impl BandPowerExtractor {
    pub fn new(sample_rate: f64) -> Result<Self> {
        if !(sample_rate >= 60.0) || !sample_rate.is_finite() {
            return Err(Error::UnsupportedSampleRate(sample_rate));
        }
        let len = frame_samples(sample_rate);
        let df = sample_rate / len as f64;
        let band_bins = BANDS_HZ.map(|(lo, hi)| {
            (0..=len / 2)
                .filter(|&k| {
                    let f = k as f64 * df;
                    lo <= f && f < hi
                })
                .collect()
        });
        Ok(BandPowerExtractor {
            sample_rate,
            taper: tukey_window(len, TUKEY_SHAPE),
            fft: FftPlanner::new().plan_fft_forward(len),
            band_bins,
        })
    }

    pub fn window_len(&self) -> usize {
        self.taper.len()
    }

    pub fn compute(&self, window: &[f64]) -> Result<[f64; 4]> {
        if window.len() != self.window_len() {
            return Err(Error::InvalidInput(format!(
                "band power window must be {} samples at {} Hz, got {}",
                self.window_len(),
                self.sample_rate,
                window.len()
            )));
        }
        let mut buf: Vec<Complex64> = window
            .iter()
            .zip(&self.taper)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        Ok(self
            .band_bins
            .each_ref()
            .map(|bins| (LOG_FLOOR + bins.iter().map(|&k| buf[k].norm()).sum::<f64>()).ln()))
    }
}

/// Log summed DFT magnitudes in the four bands of a one-second window.
pub fn band_power_features(window: &[f64], sample_rate: f64) -> Result<[f64; 4]> {
    BandPowerExtractor::new(sample_rate)?.compute(window)
}

/// Samples per analysis window.
pub fn frame_samples(sample_rate: f64) -> usize {
    (sample_rate * FRAME_LENGTH_SECONDS).round() as usize
}

/// Samples between consecutive window starts.
pub fn step_samples(sample_rate: f64) -> usize {
    (sample_rate * FRAME_STEP_SECONDS).round() as usize
}

/// Number of complete windows in `n_samples`; zero when none fits.
pub fn frame_count(n_samples: usize, sample_rate: f64) -> usize {
    let win = frame_samples(sample_rate);
    if n_samples < win {
        0
    } else {
        (n_samples - win) / step_samples(sample_rate) + 1
    }
}

fn channel_features(
    raw: &[f64],
    sample_rate: f64,
    extractor: &BandPowerExtractor,
    n_frames: usize,
) -> Result<Vec<FeatureVector>> {
    let filtered = notch_filter(&bandpass_filter(raw, sample_rate)?, sample_rate)?;
    let win = extractor.window_len();
    let step = step_samples(sample_rate);
    (0..n_frames)
        .map(|t| {
            let w = &filtered[t * step..t * step + win];
            let bands = extractor.compute(w)?;
            Ok([bands[0], bands[1], bands[2], bands[3], log_line_length(w)?])
        })
        .collect()
}

/// Filters each montage channel and computes its per-frame features.
pub fn extract_features(rec: &Recording, montage: &MontageGraph) -> Result<FeatureSeries> {
    let indices = montage
        .channels()
        .iter()
        .map(|c| {
            rec.channels
                .iter()
                .position(|r| r == c)
                .ok_or_else(|| Error::InvalidInput(format!("recording is missing channel `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_frames = frame_count(rec.n_samples(), rec.sample_rate);
    if n_frames == 0 {
        return Err(Error::InvalidInput(format!(
            "recording of {} samples is shorter than one {} s window",
            rec.n_samples(),
            FRAME_LENGTH_SECONDS
        )));
    }
    let extractor = BandPowerExtractor::new(rec.sample_rate)?;
    let frames = indices
        .iter()
        .map(|&i| channel_features(&rec.samples[i], rec.sample_rate, &extractor, n_frames))
        .collect::<Result<Vec<_>>>()?;
    let step_s = step_samples(rec.sample_rate) as f64 / rec.sample_rate;
    let len_s = frame_samples(rec.sample_rate) as f64 / rec.sample_rate;
    FeatureSeries::new(montage.channels().to_vec(), frames, step_s, len_s)
}
