//! Emission updates and supervised initialization.

use log::warn;

use super::mixture::{fit_mixture, EMPTY_COMPONENT_MASS};
use super::EmConfig;
use crate::error::{Error, Result};
use crate::eval::FrameLabels;
use crate::inference::Responsibilities;
use crate::model::{ChannelEmission, EmissionModel, STATE_SEIZURE};
use crate::montage::MontageGraph;
use crate::signal::{FeatureSeries, FeatureVector, FEATURE_DIM};

fn normalized(w: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = w.iter().sum();
    (total > 0.0).then(|| w.iter().map(|x| x / total).collect())
}

/// Re-estimates means, variances and state weights from responsibilities
/// pooled over `data` (one entry per recording).
pub fn update_emission_params(
    prev: &EmissionModel,
    data: &[(&Responsibilities, &FeatureSeries)],
    config: &EmConfig,
) -> EmissionModel {
    let channels = prev
        .channels
        .iter()
        .enumerate()
        .map(|(i, old)| {
            let n_mix = old.n_mixtures();
            let mut mass = vec![0.0; n_mix];
            let mut state_mass = vec![[0.0; 2]; n_mix];
            let mut sum = vec![[0.0; FEATURE_DIM]; n_mix];
            for (resp, feats) in data {
                for (tau, y) in resp.tau[i].iter().zip(&feats.frames[i]) {
                    for j in 0..n_mix {
                        let t = tau[j];
                        let m = t[0] + t[1] + t[2];
                        mass[j] += m;
                        state_mass[j][0] += t[0] + t[2];
                        state_mass[j][1] += t[STATE_SEIZURE as usize];
                        for d in 0..FEATURE_DIM {
                            sum[j][d] += m * y[d];
                        }
                    }
                }
            }
            let mut ch = old.clone();
            for j in 0..n_mix {
                if mass[j] < EMPTY_COMPONENT_MASS {
                    warn!("channel {i}: mixture {j} has no responsibility; keeping its previous parameters");
                    continue;
                }
                let mean: FeatureVector = sum[j].map(|s| s / mass[j]);
                let mut var = [0.0; FEATURE_DIM];
                for (resp, feats) in data {
                    for (tau, y) in resp.tau[i].iter().zip(&feats.frames[i]) {
                        let m = tau[j][0] + tau[j][1] + tau[j][2];
                        for d in 0..FEATURE_DIM {
                            var[d] += m * (y[d] - mean[d]).powi(2);
                        }
                    }
                }
                ch.means[j] = mean;
                ch.variances[j] = var.map(|v| (v / mass[j]).max(config.variance_floor));
            }
            let base: Vec<f64> = state_mass.iter().map(|m| m[0]).collect();
            let seiz: Vec<f64> = state_mass.iter().map(|m| m[1]).collect();
            if let Some(w) = normalized(&base) {
                ch.weights_baseline = w;
            }
            if let Some(w) = normalized(&seiz) {
                ch.weights_seizure = w;
            }
            ch
        })
        .collect();
    EmissionModel { channels }
}

/// Fits each channel's mixture to all labeled frames, then sets the
/// seizure weights from the seizure frames' mean responsibilities and the
/// baseline weights from the remaining frames.
pub fn init_from_annotations(
    data: &[(&FeatureSeries, &FrameLabels)],
    montage: &MontageGraph,
    config: &EmConfig,
) -> Result<EmissionModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training recordings".into()));
    }
    let mut channels = Vec::with_capacity(montage.len());
    for (i, name) in montage.channels().iter().enumerate() {
        let mut frames = Vec::new();
        let mut is_seizure = Vec::new();
        for (feats, labels) in data {
            let c = feats.channel_index(name)?;
            let lab = &labels.labels[c];
            if lab.len() != feats.frames[c].len() {
                return Err(Error::InvalidInput(format!("labels of `{name}` do not match its frames")));
            }
            frames.extend_from_slice(&feats.frames[c]);
            is_seizure.extend_from_slice(lab);
        }
        let n_seiz = is_seizure.iter().filter(|&&s| s).count();
        let n_base = is_seizure.len() - n_seiz;
        for (class, found) in [("seizure", n_seiz), ("non-seizure", n_base)] {
            if found < config.mixtures {
                return Err(Error::InsufficientData {
                    channel: name.clone(),
                    class,
                    needed: config.mixtures,
                    found,
                });
            }
        }
        let gmm = fit_mixture(&frames, &config.mixture(config.channel_seed(i)))?;
        let mut base = vec![0.0; config.mixtures];
        let mut seiz = vec![0.0; config.mixtures];
        for (y, &s) in frames.iter().zip(&is_seizure) {
            let r = gmm.responsibilities(y);
            let target = if s { &mut seiz } else { &mut base };
            for (t, v) in target.iter_mut().zip(&r) {
                *t += v;
            }
        }
        let uniform = vec![1.0 / config.mixtures as f64; config.mixtures];
        channels.push(ChannelEmission {
            means: gmm.means,
            variances: gmm.variances,
            weights_baseline: normalized(&base).unwrap_or_else(|| uniform.clone()),
            weights_seizure: normalized(&seiz).unwrap_or(uniform),
        });
    }
    Ok(EmissionModel { channels })
}
