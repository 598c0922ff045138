//! The generative coupled HMM: three-state chains per channel, logistic
//! onset/offset probabilities driven by seizing aunts, and GMM emissions
//! whose weights depend on the latent state.

pub(crate) mod file;
mod sample;

pub use file::{parse_model_file, ModelDocument, Section, MODEL_HEADER};
pub use sample::{sample_recording, sample_states};

use crate::error::{Error, Result};
use crate::montage::MontageGraph;
use crate::signal::{FeatureSeries, FeatureVector, FEATURE_DIM};

pub const N_STATES: usize = 3;
pub const STATE_PRE: u8 = 0;
pub const STATE_SEIZURE: u8 = 1;
pub const STATE_POST: u8 = 2;

/// Default number of mixture components per channel.
pub const DEFAULT_MIXTURES: usize = 3;
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Row-stochastic, upper-triangular 3x3 matrix.
pub type TransitionMatrix = [[f64; N_STATES]; N_STATES];

/// Logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(z))` without cancellation in either tail.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Global onset (`rho*`) and offset (`phi*`) log-odds coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub rho0: f64,
    pub rho1: f64,
    pub phi0: f64,
    pub phi1: f64,
}

impl TransitionParams {
    /// Starting point for learning: rare onsets (about one per 1100 frames),
    /// a ~7x onset boost per seizing aunt, ~21-frame seizures, and no
    /// coupling of offsets.
    pub const INITIAL: TransitionParams = TransitionParams {
        rho0: -7.0,
        rho1: 2.0,
        phi0: -3.0,
        phi1: 0.0,
    };

    pub fn new(rho0: f64, rho1: f64, phi0: f64, phi1: f64) -> Result<Self> {
        let p = TransitionParams {
            rho0,
            rho1,
            phi0,
            phi1,
        };
        if [rho0, rho1, phi0, phi1].iter().all(|v| v.is_finite()) {
            Ok(p)
        } else {
            Err(Error::NonFinite("transition parameters".into()))
        }
    }

    pub fn onset_logit(&self, eta: f64) -> f64 {
        self.rho0 + self.rho1 * eta
    }

    pub fn offset_logit(&self, eta: f64) -> f64 {
        self.phi0 + self.phi1 * eta
    }
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self::INITIAL
    }
}

/// Onset probability `g` and offset probability `h` given `eta` seizing aunts.
pub fn onset_offset_probs(trans: &TransitionParams, eta: usize) -> (f64, f64) {
    let eta = eta as f64;
    (
        sigmoid(trans.onset_logit(eta)),
        sigmoid(trans.offset_logit(eta)),
    )
}

/// Transition matrix with rows `[1-g, g, 0]`, `[0, 1-h, h]`, `[0, 0, 1]`.
pub fn transition_matrix(trans: &TransitionParams, eta: usize) -> TransitionMatrix {
    let (g, h) = onset_offset_probs(trans, eta);
    matrix_from_probs(g, h)
}

pub fn matrix_from_probs(g: f64, h: f64) -> TransitionMatrix {
    [[1.0 - g, g, 0.0], [0.0, 1.0 - h, h], [0.0, 0.0, 1.0]]
}

/// Elementwise log of the transition matrix at real-valued `eta`, with
/// `-inf` for the structural zeros.
pub fn log_transition_matrix(trans: &TransitionParams, eta: f64) -> TransitionMatrix {
    let zg = trans.onset_logit(eta);
    let zh = trans.offset_logit(eta);
    let ninf = f64::NEG_INFINITY;
    [
        [log_sigmoid(-zg), log_sigmoid(zg), ninf],
        [ninf, log_sigmoid(-zh), log_sigmoid(zh)],
        [ninf, ninf, 0.0],
    ]
}

/// Diagonal-covariance GMM emission parameters of one channel.
///
/// Means and variances are shared across states; the mixture weights differ
/// between baseline (pre/post, tied) and seizure.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEmission {
    pub means: Vec<FeatureVector>,
    pub variances: Vec<FeatureVector>,
    /// Weights for states 0 and 2.
    pub weights_baseline: Vec<f64>,
    /// Weights for state 1.
    pub weights_seizure: Vec<f64>,
}

impl ChannelEmission {
    pub fn n_mixtures(&self) -> usize {
        self.means.len()
    }

    pub fn weights(&self, state: u8) -> &[f64] {
        if state == STATE_SEIZURE {
            &self.weights_seizure
        } else {
            &self.weights_baseline
        }
    }

    /// `log N(y; mu_j, Sigma_j)` for every component.
    pub fn component_log_densities(&self, y: &FeatureVector) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| diag_gaussian_log_density(y, m, v))
            .collect()
    }

    /// `log sum_j pi^k_j N(y; mu_j, Sigma_j)` from precomputed component densities.
    pub fn mixture_log_likelihood(&self, log_dens: &[f64], state: u8) -> f64 {
        log_sum_exp_weighted(log_dens, self.weights(state))
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let j = self.means.len();
        if j == 0
            || self.variances.len() != j
            || self.weights_baseline.len() != j
            || self.weights_seizure.len() != j
        {
            return Err(Error::InvalidInput(format!(
                "channel `{name}`: inconsistent mixture sizes"
            )));
        }
        let finite = self
            .means
            .iter()
            .chain(&self.variances)
            .flatten()
            .chain(&self.weights_baseline)
            .chain(&self.weights_seizure)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("emission parameters of `{name}`")));
        }
        if self.variances.iter().flatten().any(|&v| v < VARIANCE_FLOOR) {
            return Err(Error::InvalidInput(format!(
                "channel `{name}`: variance below floor {VARIANCE_FLOOR}"
            )));
        }
        for w in [&self.weights_baseline, &self.weights_seizure] {
            let total: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "channel `{name}`: mixture weights must be nonnegative and sum to 1"
                )));
            }
        }
        Ok(())
    }
}

pub fn diag_gaussian_log_density(y: &FeatureVector, mean: &FeatureVector, var: &FeatureVector) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    let mut acc = 0.0;
    for d in 0..FEATURE_DIM {
        let r = y[d] - mean[d];
        acc += LN_2PI + var[d].ln() + r * r / var[d];
    }
    -0.5 * acc
}

/// `log sum_j w_j exp(l_j)`, skipping zero weights.
pub fn log_sum_exp_weighted(log_vals: &[f64], weights: &[f64]) -> f64 {
    let max = log_vals
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = log_vals
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&l, &w)| w * (l - max).exp())
        .sum();
    max + s.ln()
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Emission parameters of every channel, in montage order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionModel {
    pub channels: Vec<ChannelEmission>,
}

impl EmissionModel {
    pub fn n_mixtures(&self) -> usize {
        self.channels.first().map_or(0, ChannelEmission::n_mixtures)
    }
}

/// `log p(y | X_i = state)` marginalized over mixture components.
pub fn emission_loglik(emit: &EmissionModel, y: &FeatureVector, channel: usize, state: u8) -> f64 {
    let ch = &emit.channels[channel];
    ch.mixture_log_likelihood(&ch.component_log_densities(y), state)
}

/// Montage, transition coefficients and emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChmmModel {
    pub montage: MontageGraph,
    pub trans: TransitionParams,
    pub emit: EmissionModel,
}

impl ChmmModel {
    pub fn new(montage: MontageGraph, trans: TransitionParams, emit: EmissionModel) -> Result<Self> {
        let model = ChmmModel {
            montage,
            trans,
            emit,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        TransitionParams::new(self.trans.rho0, self.trans.rho1, self.trans.phi0, self.trans.phi1)?;
        if self.emit.channels.len() != self.montage.len() {
            return Err(Error::InvalidInput(format!(
                "emission model covers {} channels, montage has {}",
                self.emit.channels.len(),
                self.montage.len()
            )));
        }
        let j = self.emit.n_mixtures();
        for (name, ch) in self.montage.channels().iter().zip(&self.emit.channels) {
            ch.validate(name)?;
            if ch.n_mixtures() != j {
                return Err(Error::InvalidInput(format!(
                    "channel `{name}` has {} mixtures, expected {j}",
                    ch.n_mixtures()
                )));
            }
        }
        Ok(())
    }

    /// Checks that `feats` lists exactly the montage channels in montage order.
    pub fn check_features(&self, feats: &FeatureSeries) -> Result<()> {
        if feats.channels != self.montage.channels() {
            return Err(Error::InvalidInput(format!(
                "feature channels [{}] do not match montage [{}]",
                feats.channels.join(","),
                self.montage.channels().join(",")
            )));
        }
        Ok(())
    }
}

/// Latent states `states[channel][t]` with values in {0, 1, 2}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSequences {
    pub states: Vec<Vec<u8>>,
}

impl StateSequences {
    pub fn n_frames(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Checks value range, equal lengths, and `x^0 = 0`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames();
        for (i, seq) in self.states.iter().enumerate() {
            if seq.len() != n || n == 0 {
                return Err(Error::InvalidInput(format!("state sequence {i} has wrong length")));
            }
            if seq.iter().any(|&s| s as usize >= N_STATES) {
                return Err(Error::InvalidInput(format!("state sequence {i} has an invalid state")));
            }
            if seq[0] != STATE_PRE {
                return Err(Error::InvalidInput(format!(
                    "state sequence {i} does not start in the pre-seizure state"
                )));
            }
        }
        Ok(())
    }

    /// True when no channel ever moves to a lower state.
    pub fn is_monotone(&self) -> bool {
        self.states
            .iter()
            .all(|seq| seq.windows(2).all(|w| w[0] <= w[1]))
    }

    /// CSV `channel,frame,start_s,state`.
    pub fn to_csv(&self, channels: &[String], frame_starts: &[f64]) -> String {
        let mut out = String::from("channel,frame,start_s,state\n");
        for (name, seq) in channels.iter().zip(&self.states) {
            for (t, s) in seq.iter().enumerate() {
                out.push_str(&format!("{name},{t},{},{s}\n", frame_starts[t]));
            }
        }
        out
    }
}

/// Number of aunts of channel `i` in the seizure state at frame `t - 1`.
pub fn count_seizure_aunts(
    montage: &MontageGraph,
    states: &StateSequences,
    i: usize,
    t: usize,
) -> Result<usize> {
    if t == 0 {
        return Err(Error::InvalidInput("frame 0 has no previous frame".into()));
    }
    Ok(montage
        .aunt_indices(i)
        .iter()
        .filter(|&&j| states.states[j][t - 1] == STATE_SEIZURE)
        .count())
}

/// `log p(X, Y)`; `-inf` when a sequence uses a zero-probability transition.
pub fn joint_loglik(model: &ChmmModel, states: &StateSequences, feats: &FeatureSeries) -> Result<f64> {
    states.validate()?;
    model.check_features(feats)?;
    if states.states.len() != model.montage.len() || states.n_frames() != feats.n_frames() {
        return Err(Error::InvalidInput("state and feature dimensions disagree".into()));
    }
    let mut total = 0.0;
    for (i, seq) in states.states.iter().enumerate() {
        for (t, &x) in seq.iter().enumerate() {
            total += emission_loglik(&model.emit, &feats.frames[i][t], i, x);
            if t > 0 {
                let eta = count_seizure_aunts(&model.montage, states, i, t)?;
                let a = transition_matrix(&model.trans, eta);
                total += a[seq[t - 1] as usize][x as usize].ln();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montage::{EdgeKind, MontageGraph};
    use approx::assert_relative_eq;

    #[test]
    fn initial_parameter_probabilities() {
        let p = TransitionParams::INITIAL;
        let (g, h) = onset_offset_probs(&p, 0);
        assert_relative_eq!(g, 9.1105e-4, max_relative = 1e-4);
        assert_relative_eq!(h, 4.7426e-2, max_relative = 1e-4);
        let (g1, _) = onset_offset_probs(&p, 1);
        assert_relative_eq!(g1, 6.6929e-3, max_relative = 1e-4);
        assert!((g1 / g - 7.35).abs() < 0.01);
    }

    #[test]
    fn zero_logit_gives_half() {
        let p = TransitionParams::new(0.0, 0.0, 1.0, 1.0).unwrap();
        for eta in 0..5 {
            assert_eq!(onset_offset_probs(&p, eta).0, 0.5);
        }
        assert!(TransitionParams::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn matrix_structure() {
        let p = TransitionParams::INITIAL;
        let a = transition_matrix(&p, 0);
        assert_relative_eq!(a[0][1], 9.1105e-4, max_relative = 1e-4);
        assert_relative_eq!(a[1][2], 4.7426e-2, max_relative = 1e-4);
        assert_eq!(a[2], [0.0, 0.0, 1.0]);
        let off = TransitionParams::new(-800.0, 0.0, -800.0, 0.0).unwrap();
        assert_eq!(transition_matrix(&off, 3), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn log_matrix_matches_matrix() {
        let p = TransitionParams::new(-2.0, 0.7, 1.5, -0.3).unwrap();
        let a = transition_matrix(&p, 2);
        let la = log_transition_matrix(&p, 2.0);
        for r in 0..3 {
            for c in 0..3 {
                if a[r][c] == 0.0 {
                    assert_eq!(la[r][c], f64::NEG_INFINITY);
                } else {
                    assert_relative_eq!(la[r][c], a[r][c].ln(), max_relative = 1e-12);
                }
            }
        }
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }

    fn line_montage() -> MontageGraph {
        MontageGraph::new(
            &["A", "B", "C"],
            &[("A", "B", EdgeKind::Neighbor), ("B", "C", EdgeKind::Neighbor)],
        )
        .unwrap()
    }

    #[test]
    fn aunt_count_line_graph() {
        let g = line_montage();
        let s = StateSequences {
            states: vec![vec![0, 1], vec![0, 0], vec![0, 1]],
        };
        let prev = StateSequences {
            states: vec![vec![1, 1], vec![0, 0], vec![1, 1]],
        };
        assert_eq!(count_seizure_aunts(&g, &prev, 1, 1).unwrap(), 2);
        assert_eq!(count_seizure_aunts(&g, &s, 1, 1).unwrap(), 0);
        assert!(count_seizure_aunts(&g, &s, 1, 0).is_err());
    }

    fn unit_channel() -> ChannelEmission {
        ChannelEmission {
            means: vec![[0.0; 5]],
            variances: vec![[1.0; 5]],
            weights_baseline: vec![1.0],
            weights_seizure: vec![1.0],
        }
    }

    #[test]
    fn standard_normal_emission() {
        let emit = EmissionModel {
            channels: vec![unit_channel()],
        };
        let v = emission_loglik(&emit, &[0.0; 5], 0, 0);
        assert!((v - (-4.5947)).abs() < 1e-4);
        assert_relative_eq!(v, -2.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn tied_states_agree() {
        let ch = ChannelEmission {
            means: vec![[0.0; 5], [3.0; 5]],
            variances: vec![[1.0; 5], [2.0; 5]],
            weights_baseline: vec![0.3, 0.7],
            weights_seizure: vec![0.9, 0.1],
        };
        let emit = EmissionModel { channels: vec![ch] };
        let y = [0.5, 1.0, -2.0, 3.0, 0.1];
        assert_eq!(emission_loglik(&emit, &y, 0, 0), emission_loglik(&emit, &y, 0, 2));
    }

    #[test]
    fn dominant_component() {
        let ch = ChannelEmission {
            means: vec![[0.0; 5], [100.0; 5]],
            variances: vec![[1.0; 5], [1.0; 5]],
            weights_baseline: vec![0.5, 0.5],
            weights_seizure: vec![1.0, 0.0],
        };
        let emit = EmissionModel { channels: vec![ch] };
        let single = diag_gaussian_log_density(&[0.0; 5], &[0.0; 5], &[1.0; 5]);
        assert!((emission_loglik(&emit, &[0.0; 5], 0, 1) - single).abs() < 1e-6);
    }

    #[test]
    fn joint_loglik_basic_cases() {
        let montage = MontageGraph::isolated(&["A"]).unwrap();
        let model = ChmmModel::new(
            montage,
            TransitionParams::INITIAL,
            EmissionModel {
                channels: vec![unit_channel()],
            },
        )
        .unwrap();
        let feats = FeatureSeries::new(vec!["A".into()], vec![vec![[0.1; 5]]], 0.75, 1.0).unwrap();
        let s = StateSequences {
            states: vec![vec![0]],
        };
        assert_eq!(
            joint_loglik(&model, &s, &feats).unwrap(),
            emission_loglik(&model.emit, &[0.1; 5], 0, 0)
        );

        let feats3 =
            FeatureSeries::new(vec!["A".into()], vec![vec![[0.1; 5]; 3]], 0.75, 1.0).unwrap();
        let back = StateSequences {
            states: vec![vec![0, 1, 0]],
        };
        assert_eq!(joint_loglik(&model, &back, &feats3).unwrap(), f64::NEG_INFINITY);
        let bad_start = StateSequences {
            states: vec![vec![1, 1, 1]],
        };
        assert!(joint_loglik(&model, &bad_start, &feats3).is_err());
    }
}
