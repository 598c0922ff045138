//! Exact smoothing on one three-state left-to-right chain, in log space.

use crate::model::{N_STATES, STATE_PRE};

/// Largest probability allowed before taking logs of `1 - p`.
pub const PROB_CEIL: f64 = 1.0 - 1e-15;
/// Smallest probability allowed before taking logs of `p`.
pub const PROB_FLOOR: f64 = 1e-300;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// Parameters of one independent variational chain.
///
/// Transitions follow the `[1-g, g, 0] / [0, 1-h, h] / [0, 0, 1]` pattern;
/// `log_weights[t][k]` is the unnormalized log evidence for state `k` at
/// frame `t`. The chain starts in state 0 with probability one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    /// `onset[t - 1]` is the onset probability into frame `t`.
    pub onset: Vec<f64>,
    /// `offset[t - 1]` is the offset probability into frame `t`.
    pub offset: Vec<f64>,
    pub log_weights: Vec<[f64; N_STATES]>,
}

impl ChainParams {
    /// T + 1.
    pub fn n_frames(&self) -> usize {
        self.log_weights.len()
    }

    /// Log transition matrix into frame `t >= 1`.
    pub fn log_trans(&self, t: usize) -> [[f64; N_STATES]; N_STATES] {
        let g = self.onset[t - 1];
        let h = self.offset[t - 1];
        let ninf = f64::NEG_INFINITY;
        [
            [(-g).ln_1p(), g.ln(), ninf],
            [ninf, (-h).ln_1p(), h.ln()],
            [ninf, ninf, 0.0],
        ]
    }
}

/// Smoothed marginals, pairwise marginals and log normalizer of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPosterior {
    pub gamma: Vec<[f64; N_STATES]>,
    /// `xi[t - 1][k][k']` = Q(x^{t-1} = k, x^t = k').
    pub xi: Vec<[[f64; N_STATES]; N_STATES]>,
    pub log_z: f64,
}

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

#[inline]
fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
    }
}

/// Forward-backward in the log domain.
pub fn forward_backward(chain: &ChainParams) -> ChainPosterior {
    let n = chain.n_frames();
    assert!(n >= 1, "chain needs at least one frame");
    assert_eq!(chain.onset.len(), n - 1);
    assert_eq!(chain.offset.len(), n - 1);
    let ninf = f64::NEG_INFINITY;

    let trans: Vec<_> = (1..n).map(|t| chain.log_trans(t)).collect();
    let w = &chain.log_weights;

    // Each alpha row is normalized to log-sum zero; `scale[t]` holds the
    // removed log mass, and beta is divided by the same factors.
    let mut alpha = vec![[ninf; N_STATES]; n];
    let mut scale = vec![0.0; n];
    alpha[0][STATE_PRE as usize] = 0.0;
    scale[0] = w[0][0];
    for t in 1..n {
        let a = &alpha[t - 1];
        let l = &trans[t - 1];
        let row = [
            w[t][0] + a[0] + l[0][0],
            w[t][1] + lse2(a[0] + l[0][1], a[1] + l[1][1]),
            w[t][2] + lse2(a[1] + l[1][2], a[2] + l[2][2]),
        ];
        let c = lse3(row[0], row[1], row[2]);
        scale[t] = c;
        alpha[t] = [row[0] - c, row[1] - c, row[2] - c];
    }
    let log_z = scale.iter().sum();

    let mut beta = vec![[0.0; N_STATES]; n];
    for t in (1..n).rev() {
        let l = &trans[t - 1];
        let b = &beta[t];
        let e = [w[t][0] + b[0], w[t][1] + b[1], w[t][2] + b[2]];
        let c = scale[t];
        beta[t - 1] = [
            lse2(l[0][0] + e[0], l[0][1] + e[1]) - c,
            lse2(l[1][1] + e[1], l[1][2] + e[2]) - c,
            l[2][2] + e[2] - c,
        ];
    }

    let gamma = (0..n)
        .map(|t| {
            let mut g = [0.0; N_STATES];
            for k in 0..N_STATES {
                let v = alpha[t][k] + beta[t][k];
                g[k] = if v == ninf || v.is_nan() { 0.0 } else { v.exp() };
            }
            let s: f64 = g.iter().sum();
            g.map(|p| p / s)
        })
        .collect();

    let xi = (1..n)
        .map(|t| {
            let l = &trans[t - 1];
            let mut x = [[0.0; N_STATES]; N_STATES];
            for k in 0..N_STATES {
                for kp in k..N_STATES {
                    let v = alpha[t - 1][k] + l[k][kp] + w[t][kp] + beta[t][kp] - scale[t];
                    x[k][kp] = if v == ninf || v.is_nan() { 0.0 } else { v.exp() };
                }
            }
            x
        })
        .collect();

    ChainPosterior { gamma, xi, log_z }
}
