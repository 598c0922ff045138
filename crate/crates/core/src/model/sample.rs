//! Ancestral sampling from the generative model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{onset_offset_probs, ChmmModel, StateSequences, TransitionParams, STATE_PRE};
use crate::montage::MontageGraph;
use crate::signal::{FeatureSeries, FeatureVector, FEATURE_DIM, FRAME_LENGTH_SECONDS, FRAME_STEP_SECONDS};

/// Samples latent states for frames `0..=last_frame`, all channels starting at 0.
pub fn sample_states<R: Rng + ?Sized>(
    montage: &MontageGraph,
    trans: &TransitionParams,
    last_frame: usize,
    rng: &mut R,
) -> StateSequences {
    let n = montage.len();
    let max_eta = montage.max_degree();
    // g and h for every possible aunt count
    let probs: Vec<(f64, f64)> = (0..=max_eta).map(|e| onset_offset_probs(trans, e)).collect();
    let mut states = vec![vec![STATE_PRE; last_frame + 1]; n];
    let mut prev = vec![STATE_PRE; n];
    let mut cur = vec![STATE_PRE; n];
    for t in 1..=last_frame {
        for i in 0..n {
            let eta = montage
                .aunt_indices(i)
                .iter()
                .filter(|&&j| prev[j] == 1)
                .count();
            let (g, h) = probs[eta];
            cur[i] = match prev[i] {
                0 if rng.random::<f64>() < g => 1,
                1 if rng.random::<f64>() < h => 2,
                s => s,
            };
            states[i][t] = cur[i];
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    StateSequences { states }
}

fn sample_emission<R: Rng + ?Sized>(
    model: &ChmmModel,
    channel: usize,
    state: u8,
    rng: &mut R,
) -> FeatureVector {
    let ch = &model.emit.channels[channel];
    let weights = ch.weights(state);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut j = weights.len() - 1;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            j = k;
            break;
        }
    }
    let mut y = [0.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        let z: f64 = rng.sample(StandardNormal);
        y[d] = ch.means[j][d] + ch.variances[j][d].sqrt() * z;
    }
    y
}

/// Draws states and features for frames `0..=last_frame`. Deterministic in `seed`.
pub fn sample_recording(
    model: &ChmmModel,
    last_frame: usize,
    seed: u64,
) -> (StateSequences, FeatureSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = sample_states(&model.montage, &model.trans, last_frame, &mut rng);
    let frames = states
        .states
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            seq.iter()
                .map(|&s| sample_emission(model, i, s, &mut rng))
                .collect()
        })
        .collect();
    let feats = FeatureSeries::new(
        model.montage.channels().to_vec(),
        frames,
        FRAME_STEP_SECONDS,
        FRAME_LENGTH_SECONDS,
    )
    .expect("sampled features are well formed");
    (states, feats)
}
