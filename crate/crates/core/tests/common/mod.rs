#![allow(dead_code)]

use chmm::inference::ChainParams;
use chmm::model::{ChannelEmission, ChmmModel, EmissionModel, TransitionParams};
use chmm::montage::{EdgeKind, MontageGraph};
use chmm::signal::{FeatureSeries, FeatureVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn line_montage(n: usize) -> MontageGraph {
    let names: Vec<String> = (0..n).map(|i| format!("C{i}")).collect();
    let edges: Vec<(String, String, EdgeKind)> = (1..n)
        .map(|i| (names[i - 1].clone(), names[i].clone(), EdgeKind::Neighbor))
        .collect();
    MontageGraph::new(&names, &edges).unwrap()
}

fn random_weights(r: &mut ChaCha8Rng, j: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..j).map(|_| r.random::<f64>() + 0.05).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

pub fn random_emissions(r: &mut ChaCha8Rng, n: usize, j: usize) -> EmissionModel {
    let channels = (0..n)
        .map(|_| ChannelEmission {
            means: (0..j).map(|_| std::array::from_fn(|_| r.random_range(-1.5..1.5))).collect(),
            variances: (0..j).map(|_| std::array::from_fn(|_| r.random_range(0.5..2.0))).collect(),
            weights_baseline: random_weights(r, j),
            weights_seizure: random_weights(r, j),
        })
        .collect();
    EmissionModel { channels }
}

pub fn random_trans(r: &mut ChaCha8Rng) -> TransitionParams {
    TransitionParams::new(
        r.random_range(-3.0..0.0),
        r.random_range(0.0..2.5),
        r.random_range(-2.5..0.0),
        r.random_range(-1.0..1.0),
    )
    .unwrap()
}

pub fn random_features(r: &mut ChaCha8Rng, channels: &[String], frames: usize) -> FeatureSeries {
    let data = channels
        .iter()
        .map(|_| {
            (0..frames)
                .map(|_| std::array::from_fn(|_| r.random_range(-2.0..2.0)))
                .collect()
        })
        .collect();
    FeatureSeries::new(channels.to_vec(), data, 0.75, 1.0).unwrap()
}

pub fn random_model(r: &mut ChaCha8Rng, montage: MontageGraph, j: usize) -> ChmmModel {
    let n = montage.len();
    let emit = random_emissions(r, n, j);
    ChmmModel::new(montage, random_trans(r), emit).unwrap()
}

/// log N(y; m, diag v), written out independently of the library.
pub fn gauss(y: &FeatureVector, m: &FeatureVector, v: &FeatureVector) -> f64 {
    y.iter()
        .zip(m)
        .zip(v)
        .map(|((y, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y - m).powi(2) / v))
        .sum()
}

pub fn emission(ch: &ChannelEmission, y: &FeatureVector, state: u8) -> f64 {
    let w = if state == 1 { &ch.weights_seizure } else { &ch.weights_baseline };
    let terms: Vec<f64> = (0..ch.means.len())
        .map(|j| w[j].ln() + gauss(y, &ch.means[j], &ch.variances[j]))
        .collect();
    lse(&terms)
}

/// All state sequences of length `len` starting in 0 that never decrease
/// and never skip a state.
pub fn monotone_paths(len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8];
    fn go(cur: &mut Vec<u8>, len: usize, out: &mut Vec<Vec<u8>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        let last = *cur.last().unwrap();
        for next in last..=(last + 1).min(2) {
            cur.push(next);
            go(cur, len, out);
            cur.pop();
        }
    }
    go(&mut cur, len, &mut out);
    out
}

/// log p(X, Y) for a full joint configuration.
pub fn joint_log_prob(model: &ChmmModel, feats: &FeatureSeries, states: &[&Vec<u8>]) -> f64 {
    let t_len = feats.n_frames();
    let t = &model.trans;
    let mut acc = 0.0;
    for i in 0..states.len() {
        acc += emission(&model.emit.channels[i], &feats.frames[i][0], states[i][0]);
        for f in 1..t_len {
            let eta = model
                .montage
                .aunt_indices(i)
                .iter()
                .filter(|&&j| states[j][f - 1] == 1)
                .count() as f64;
            let g = sig(t.rho0 + t.rho1 * eta);
            let h = sig(t.phi0 + t.phi1 * eta);
            let p = match (states[i][f - 1], states[i][f]) {
                (0, 0) => 1.0 - g,
                (0, 1) => g,
                (1, 1) => 1.0 - h,
                (1, 2) => h,
                (2, 2) => 1.0,
                _ => 0.0,
            };
            acc += p.ln() + emission(&model.emit.channels[i], &feats.frames[i][f], states[i][f]);
        }
    }
    acc
}

/// `log p(Y)` by enumerating every joint configuration with nonzero probability.
pub fn brute_log_evidence(model: &ChmmModel, feats: &FeatureSeries) -> f64 {
    let paths = monotone_paths(feats.n_frames());
    let n = model.montage.len();
    let mut idx = vec![0usize; n];
    let mut terms = Vec::new();
    loop {
        let states: Vec<&Vec<u8>> = idx.iter().map(|&k| &paths[k]).collect();
        terms.push(joint_log_prob(model, feats, &states));
        let mut c = 0;
        loop {
            if c == n {
                return lse(&terms);
            }
            idx[c] += 1;
            if idx[c] < paths.len() {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
    }
}

pub fn random_chain(r: &mut ChaCha8Rng, frames: usize) -> ChainParams {
    ChainParams {
        onset: (1..frames).map(|_| r.random_range(0.01..0.99)).collect(),
        offset: (1..frames).map(|_| r.random_range(0.01..0.99)).collect(),
        log_weights: (0..frames)
            .map(|_| std::array::from_fn(|_| r.random_range(-3.0..1.0)))
            .collect(),
    }
}

/// Probability of every path of a single chain, over all 3^len sequences.
pub fn chain_path_log_probs(c: &ChainParams) -> Vec<(Vec<u8>, f64)> {
    let len = c.log_weights.len();
    let total = 3usize.pow(len as u32);
    (0..total)
        .map(|code| {
            let mut s = Vec::with_capacity(len);
            let mut x = code;
            for _ in 0..len {
                s.push((x % 3) as u8);
                x /= 3;
            }
            let mut lp = if s[0] == 0 { c.log_weights[0][0] } else { f64::NEG_INFINITY };
            for t in 1..len {
                let g = c.onset[t - 1];
                let h = c.offset[t - 1];
                let p = match (s[t - 1], s[t]) {
                    (0, 0) => 1.0 - g,
                    (0, 1) => g,
                    (1, 1) => 1.0 - h,
                    (1, 2) => h,
                    (2, 2) => 1.0,
                    _ => 0.0,
                };
                lp += p.ln() + c.log_weights[t][s[t] as usize];
            }
            (s, lp)
        })
        .collect()
}

/// Standard-montage model with transitions `trans` whose
/// seizure frames favor a shifted mixture component. `shift` sets how far
/// the seizure component sits from the baseline ones.
pub fn synthetic_model(shift: f64, trans: TransitionParams) -> ChmmModel {
    let montage = chmm::montage::build_standard_montage();
    let ch = ChannelEmission {
        means: vec![[0.0; 5], [0.8, -0.5, 0.3, 0.0, 0.6], [shift, shift, 0.5 * shift, 0.0, shift]],
        variances: vec![[1.0; 5], [0.7; 5], [1.2; 5]],
        weights_baseline: vec![0.55, 0.4, 0.05],
        weights_seizure: vec![0.15, 0.1, 0.75],
    };
    let emit = EmissionModel {
        channels: vec![ch; montage.len()],
    };
    ChmmModel::new(montage, trans, emit).unwrap()
}
