//! Soft-count logistic regressions for the onset and offset probabilities.

use std::collections::BTreeMap;

use super::newton::{fit_logistic, LogisticProblem};
use super::EmConfig;
use crate::error::Result;
use crate::inference::{poisson_binomial, CouplingExpectation, PosteriorStats};
use crate::model::{TransitionParams, STATE_SEIZURE};
use crate::montage::MontageGraph;

/// Aunt-count covariate with the transition mass observed at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow {
    pub aunts: f64,
    /// Expected number of frames that could make the transition.
    pub weight: f64,
    /// Expected number of frames that made it.
    pub outcome: f64,
}

/// Regression data for onset (0 -> 1) and offset (1 -> 2) transitions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionDesignMatrix {
    pub onset: Vec<DesignRow>,
    pub offset: Vec<DesignRow>,
}

fn accumulate(rows: &mut BTreeMap<u64, DesignRow>, aunts: f64, weight: f64, outcome: f64) {
    let row = rows.entry(aunts.to_bits()).or_insert(DesignRow {
        aunts,
        weight: 0.0,
        outcome: 0.0,
    });
    row.weight += weight;
    row.outcome += outcome;
}

impl TransitionDesignMatrix {
    /// Builds the regression data from one recording's posterior.
    ///
    /// With [`CouplingExpectation::Exact`] each frame contributes to every
    /// integer aunt count in proportion to its probability under the aunts'
    /// marginals; otherwise it contributes once at the expected count.
    pub fn from_posteriors(montage: &MontageGraph, stats: &PosteriorStats, coupling: CouplingExpectation) -> Self {
        let mut onset = BTreeMap::new();
        let mut offset = BTreeMap::new();
        let mut dist = Vec::new();
        for i in 0..montage.len() {
            let aunts = montage.aunt_indices(i);
            for (t, xi) in stats.xi[i].iter().enumerate().map(|(k, x)| (k + 1, x)) {
                let on_w = xi[0][0] + xi[0][1];
                let off_w = xi[1][1] + xi[1][2];
                match coupling {
                    CouplingExpectation::Exact => {
                        poisson_binomial(
                            aunts.iter().map(|&j| stats.gamma[j][t - 1][STATE_SEIZURE as usize]),
                            &mut dist,
                        );
                        for (m, &p) in dist.iter().enumerate() {
                            if p > 0.0 {
                                accumulate(&mut onset, m as f64, p * on_w, p * xi[0][1]);
                                accumulate(&mut offset, m as f64, p * off_w, p * xi[1][2]);
                            }
                        }
                    }
                    CouplingExpectation::MeanActivation => {
                        let e = stats.expected_aunts[i][t];
                        accumulate(&mut onset, e, on_w, xi[0][1]);
                        accumulate(&mut offset, e, off_w, xi[1][2]);
                    }
                }
            }
        }
        TransitionDesignMatrix {
            onset: onset.into_values().collect(),
            offset: offset.into_values().collect(),
        }
    }

    /// Pools the rows of several recordings, merging equal covariates.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a TransitionDesignMatrix>) -> Self {
        let mut onset = BTreeMap::new();
        let mut offset = BTreeMap::new();
        for p in parts {
            for r in &p.onset {
                accumulate(&mut onset, r.aunts, r.weight, r.outcome);
            }
            for r in &p.offset {
                accumulate(&mut offset, r.aunts, r.weight, r.outcome);
            }
        }
        TransitionDesignMatrix {
            onset: onset.into_values().collect(),
            offset: offset.into_values().collect(),
        }
    }

    pub fn onset_problem(&self) -> LogisticProblem {
        problem(&self.onset)
    }

    pub fn offset_problem(&self) -> LogisticProblem {
        problem(&self.offset)
    }
}

fn problem(rows: &[DesignRow]) -> LogisticProblem {
    let mut p = LogisticProblem::default();
    for r in rows {
        // guard against rounding pushing the outcome past the weight
        p.push(vec![1.0, r.aunts], r.weight, r.outcome.min(r.weight));
    }
    p
}

/// Fits `(rho0, rho1)` and `(phi0, phi1)` by Newton's method from `init`.
pub fn fit_transition_params(
    design: &TransitionDesignMatrix,
    init: &TransitionParams,
    config: &EmConfig,
) -> Result<TransitionParams> {
    let newton = config.newton();
    let on = fit_logistic(&design.onset_problem(), &[init.rho0, init.rho1], &newton)?;
    let off = fit_logistic(&design.offset_problem(), &[init.phi0, init.phi1], &newton)?;
    TransitionParams::new(on.beta[0], on.beta[1], off.beta[0], off.beta[1])
}
