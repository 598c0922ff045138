//! Preprocessing filters and feature extraction from raw multichannel EEG.

mod features;
mod filter;
pub(crate) mod io;

pub use features::{
    band_power_features, extract_features, frame_count, frame_samples, log_line_length,
    step_samples, tukey_window, BandPowerExtractor, FeatureSeries, FeatureVector, BANDS_HZ,
    FEATURE_DIM, FEATURE_NAMES, FRAME_LENGTH_SECONDS, FRAME_STEP_SECONDS, LOG_FLOOR,
    TUKEY_SHAPE,
};
pub use filter::{
    bandpass_filter, notch_filter, Band, Biquad, SosFilter, BUTTERWORTH_ORDER, HIGHPASS_HZ,
    LOWPASS_HZ, NOTCH_HZ, NOTCH_Q,
};
pub use io::{parse_features_csv, parse_labels_csv, parse_recording_csv};

use crate::error::{Error, Result};

/// Raw multichannel samples in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sample_rate: f64,
    pub channels: Vec<String>,
    /// `samples[channel][n]`
    pub samples: Vec<Vec<f64>>,
}

impl Recording {
    pub fn new(sample_rate: f64, channels: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidInput(format!("sample rate must be positive, got {sample_rate}")));
        }
        if channels.len() != samples.len() {
            return Err(Error::InvalidInput("channel names and sample columns differ in count".into()));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.len() != first.len()) {
                return Err(Error::InvalidInput("channels have different sample counts".into()));
            }
        }
        Ok(Recording {
            sample_rate,
            channels,
            samples,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate
    }
}

/// A seizure interval in seconds; `channel == None` applies to every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelInterval {
    pub channel: Option<String>,
    pub onset: f64,
    pub offset: f64,
}

/// Expert (or simulated) seizure annotations for one recording.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeizureLabels {
    pub intervals: Vec<LabelInterval>,
}

impl SeizureLabels {
    /// Checks `0 <= onset < offset <= duration` for every interval.
    pub fn validate(&self, duration: f64) -> Result<()> {
        for iv in &self.intervals {
            if !(0.0 <= iv.onset && iv.onset < iv.offset && iv.offset <= duration) {
                return Err(Error::InvalidInput(format!(
                    "label interval [{}, {}) outside recording of {duration} s",
                    iv.onset, iv.offset
                )));
            }
        }
        Ok(())
    }

    /// Whether `channel` is labeled as seizing at time `t` seconds.
    pub fn is_seizure(&self, channel: &str, t: f64) -> bool {
        self.intervals.iter().any(|iv| {
            iv.channel.as_deref().is_none_or(|c| c == channel) && iv.onset <= t && t < iv.offset
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,onset_s,offset_s\n");
        for iv in &self.intervals {
            out.push_str(&format!(
                "{},{},{}\n",
                iv.channel.as_deref().unwrap_or("*"),
                iv.onset,
                iv.offset
            ));
        }
        out
    }
}
