//! Structured variational E-step: per-chain coordinate updates with exact
//! free-energy bookkeeping.
//!
//! The posterior over all channels is approximated by independent chains.
//! The free energy splits into a per-chain part (chain entropy and emission
//! evidence) and a coupling part, the expected log transition probability of
//! each chain under its aunts' marginals. Updating chain `i` changes its own
//! terms and the coupling terms of its aunts, so only those are recomputed.

use serde::Deserialize;

use super::coupling::{poisson_binomial, CouplingExpectation, CouplingTable, ExpectedLogTransitions};
use super::forward_backward::{clamp_prob, forward_backward, ChainParams, ChainPosterior};
use crate::error::{Error, Result};
use crate::model::{sigmoid, ChmmModel, EmissionModel, TransitionParams, N_STATES, STATE_SEIZURE};
use crate::montage::MontageGraph;
use crate::signal::FeatureSeries;

/// How a chain's variational parameters are refit in each coordinate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Exact minimizer of the free energy over chain `i` with the other
    /// chains fixed. Includes the influence of chain `i` on its aunts'
    /// transition terms. With exact coupling the free energy never
    /// increases; the mean-activation coupling gives no such guarantee.
    #[default]
    Coordinate,
    /// Data weights set to the emission likelihoods and transition log-odds
    /// set to the linear predictor at the expected aunt count.
    MeanActivation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepConfig {
    /// Relative free-energy change per sweep that counts as converged.
    pub tol: f64,
    pub max_sweeps: usize,
    pub rule: UpdateRule,
    pub coupling: CouplingExpectation,
}

impl Default for EStepConfig {
    fn default() -> Self {
        EStepConfig {
            tol: 1e-4,
            max_sweeps: 50,
            rule: UpdateRule::default(),
            coupling: CouplingExpectation::default(),
        }
    }
}

/// Emission log-likelihoods `[log p(y | X = 0 or 2), log p(y | X = 1)]`
/// per channel and frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWeights {
    pub log_lik: Vec<Vec<[f64; 2]>>,
}

impl DataWeights {
    #[inline]
    fn state(&self, i: usize, t: usize, k: usize) -> f64 {
        self.log_lik[i][t][usize::from(k == STATE_SEIZURE as usize)]
    }
}

/// Emission likelihoods of every frame under `emit`.
pub fn set_data_weights(emit: &EmissionModel, feats: &FeatureSeries) -> DataWeights {
    let log_lik = emit
        .channels
        .iter()
        .zip(&feats.frames)
        .map(|(ch, frames)| {
            frames
                .iter()
                .map(|y| {
                    let dens = ch.component_log_densities(y);
                    [
                        ch.mixture_log_likelihood(&dens, 0),
                        ch.mixture_log_likelihood(&dens, STATE_SEIZURE),
                    ]
                })
                .collect()
        })
        .collect();
    DataWeights { log_lik }
}

/// Variational parameters of every chain.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalChains {
    /// Emission likelihoods under the model the chains were fit against.
    pub data: DataWeights,
    pub chains: Vec<ChainParams>,
    pub log_z: Vec<f64>,
}

/// Posterior summaries of the factored approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    /// `gamma[i][t][k]` = Q(x_i^t = k).
    pub gamma: Vec<Vec<[f64; N_STATES]>>,
    /// `xi[i][t - 1][k][k']` = Q(x_i^{t-1} = k, x_i^t = k').
    pub xi: Vec<Vec<[[f64; N_STATES]; N_STATES]>>,
    /// `expected_aunts[i][t]` = E_Q[eta_i^t]; zero at `t = 0`.
    pub expected_aunts: Vec<Vec<f64>>,
}

impl PosteriorStats {
    pub fn from_posteriors(montage: &MontageGraph, posts: &[ChainPosterior]) -> Self {
        let gamma: Vec<_> = posts.iter().map(|p| p.gamma.clone()).collect();
        let expected_aunts = (0..posts.len())
            .map(|i| expected_aunt_counts(montage, &gamma, i))
            .collect();
        PosteriorStats {
            xi: posts.iter().map(|p| p.xi.clone()).collect(),
            gamma,
            expected_aunts,
        }
    }

    /// Q(x_i^t = seizure) for every channel and frame.
    pub fn seizure_probability(&self) -> Vec<Vec<f64>> {
        self.gamma
            .iter()
            .map(|g| g.iter().map(|p| p[STATE_SEIZURE as usize]).collect())
            .collect()
    }
}

/// `E_Q[eta_i^t] = sum over aunts j of Q(x_j^{t-1} = 1)`, for t = 0..=T.
pub fn expected_aunt_counts(montage: &MontageGraph, gamma: &[Vec<[f64; N_STATES]>], i: usize) -> Vec<f64> {
    let n = gamma[i].len();
    let mut out = vec![0.0; n];
    for (t, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = montage
            .aunt_indices(i)
            .iter()
            .map(|&j| gamma[j][t - 1][STATE_SEIZURE as usize])
            .sum();
    }
    out
}

/// Onset and offset probabilities whose log-odds are the linear predictors
/// at the expected aunt count, for frames `1..=T` of chain `i`.
pub fn update_chain_transitions(
    trans: &TransitionParams,
    stats: &PosteriorStats,
    montage: &MontageGraph,
    i: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ebar = expected_aunt_counts(montage, &stats.gamma, i);
    ebar[1..]
        .iter()
        .map(|&e| variational_transition_probs(trans, e))
        .unzip()
}

/// `(sigmoid(rho0 + rho1 e), sigmoid(phi0 + phi1 e))`, clamped away from 0 and 1.
pub fn variational_transition_probs(trans: &TransitionParams, expected_aunts: f64) -> (f64, f64) {
    (
        clamp_prob(sigmoid(trans.onset_logit(expected_aunts))),
        clamp_prob(sigmoid(trans.offset_logit(expected_aunts))),
    )
}

/// One entry of the free-energy trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeTraceEntry {
    pub sweep: usize,
    pub channel: usize,
    pub free_energy: f64,
}

#[derive(Debug, Clone)]
pub struct EStepOutput {
    pub stats: PosteriorStats,
    pub chains: VariationalChains,
    /// Free energy after every chain update.
    pub trace: Vec<FeTraceEntry>,
    /// Free energy of the starting chains, before any update.
    pub initial_free_energy: f64,
    pub free_energy: f64,
    pub sweeps: usize,
    pub converged: bool,
}

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Engine<'a> {
    montage: &'a MontageGraph,
    data: &'a DataWeights,
    table: CouplingTable,
    coupling: CouplingExpectation,
    chains: Vec<ChainParams>,
    posts: Vec<ChainPosterior>,
    own: Vec<f64>,
    coupled: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(
        montage: &'a MontageGraph,
        trans: &TransitionParams,
        data: &'a DataWeights,
        coupling: CouplingExpectation,
        chains: Vec<ChainParams>,
        posts: Vec<ChainPosterior>,
    ) -> Self {
        let n = chains.len();
        let mut engine = Engine {
            montage,
            data,
            table: CouplingTable::new(trans, montage.max_degree()),
            coupling,
            chains,
            posts,
            own: vec![0.0; n],
            coupled: vec![0.0; n],
            scratch: Vec::new(),
        };
        for i in 0..n {
            engine.own[i] = engine.own_term(i);
            engine.coupled[i] = engine.coupled_term(i);
        }
        engine
    }

    fn total(&self) -> f64 {
        self.own.iter().sum::<f64>() + self.coupled.iter().sum::<f64>()
    }

    /// E_Q[log Q_i] minus the expected emission log-likelihood of chain `i`.
    fn own_term(&self, i: usize) -> f64 {
        let chain = &self.chains[i];
        let post = &self.posts[i];
        let mut acc = -post.log_z;
        for (t, g) in post.gamma.iter().enumerate() {
            for k in 0..N_STATES {
                if g[k] > 0.0 {
                    acc += g[k] * (chain.log_weights[t][k] - self.data.state(i, t, k));
                }
            }
        }
        for (t, xi) in post.xi.iter().enumerate() {
            let la = chain.log_trans(t + 1);
            for (k, kp) in [(0, 0), (0, 1), (1, 1), (1, 2)] {
                if xi[k][kp] > 0.0 {
                    acc += xi[k][kp] * la[k][kp];
                }
            }
        }
        acc
    }

    /// Expected log transition terms of chain `i` at frame `t` under the
    /// aunts' marginals at `t - 1`, optionally leaving one aunt out and
    /// adding `shift` to the count.
    fn aunt_expectation(&mut self, i: usize, t: usize, exclude: Option<usize>, shift: usize) -> ExpectedLogTransitions {
        let aunts = self.montage.aunt_indices(i);
        let p1 = |j: usize| self.posts[j].gamma[t - 1][STATE_SEIZURE as usize];
        match self.coupling {
            CouplingExpectation::Exact => {
                let probs = aunts.iter().filter(|&&j| Some(j) != exclude).map(|&j| p1(j));
                let mut dist = std::mem::take(&mut self.scratch);
                poisson_binomial(probs, &mut dist);
                let e = self.table.expected(&dist, shift);
                self.scratch = dist;
                e
            }
            CouplingExpectation::MeanActivation => {
                let ebar: f64 = aunts
                    .iter()
                    .filter(|&&j| Some(j) != exclude)
                    .map(|&j| p1(j))
                    .sum();
                self.table.at_mean(ebar + shift as f64)
            }
        }
    }

    /// Minus the expected log transition probability of chain `i`.
    fn coupled_term(&mut self, i: usize) -> f64 {
        let n = self.chains[i].n_frames();
        let mut acc = 0.0;
        for t in 1..n {
            let e = self.aunt_expectation(i, t, None, 0);
            acc -= e.dot(&self.posts[i].xi[t - 1]);
        }
        acc
    }

    fn base_weights(&self, i: usize) -> Vec<[f64; N_STATES]> {
        self.data.log_lik[i]
            .iter()
            .map(|&[base, seizure]| [base, seizure, base])
            .collect()
    }

    fn coordinate_params(&mut self, i: usize) -> ChainParams {
        let n = self.chains[i].n_frames();
        let mut w = self.base_weights(i);
        let mut onset = Vec::with_capacity(n - 1);
        let mut offset = Vec::with_capacity(n - 1);
        let aunts = self.montage.aunt_indices(i).to_vec();
        for t in 1..n {
            let e = self.aunt_expectation(i, t, None, 0);
            // Normalize each row; the row mass moves onto frame t-1.
            let r0 = lse2(e.stay_pre, e.onset);
            let r1 = lse2(e.stay_seizure, e.offset);
            onset.push(clamp_prob((e.onset - r0).exp()));
            offset.push(clamp_prob((e.offset - r1).exp()));
            w[t - 1][0] += r0;
            w[t - 1][1] += r1;
            // Chain i's state at t-1 enters each aunt's transition at t.
            for &j in &aunts {
                let xi = self.posts[j].xi[t - 1];
                let c0 = self.aunt_expectation(j, t, Some(i), 0).dot(&xi);
                let c1 = self.aunt_expectation(j, t, Some(i), 1).dot(&xi);
                w[t - 1][0] += c0;
                w[t - 1][1] += c1;
                w[t - 1][2] += c0;
            }
        }
        ChainParams {
            onset,
            offset,
            log_weights: w,
        }
    }

    fn mean_activation_params(&self, i: usize, trans: &TransitionParams) -> ChainParams {
        let gamma: Vec<&[[f64; N_STATES]]> = self.posts.iter().map(|p| p.gamma.as_slice()).collect();
        let n = self.chains[i].n_frames();
        let (onset, offset) = (1..n)
            .map(|t| {
                let ebar: f64 = self
                    .montage
                    .aunt_indices(i)
                    .iter()
                    .map(|&j| gamma[j][t - 1][STATE_SEIZURE as usize])
                    .sum();
                variational_transition_probs(trans, ebar)
            })
            .unzip();
        ChainParams {
            onset,
            offset,
            log_weights: self.base_weights(i),
        }
    }

    fn set_chain(&mut self, i: usize, params: ChainParams) {
        self.posts[i] = forward_backward(&params);
        self.chains[i] = params;
        self.own[i] = self.own_term(i);
        self.coupled[i] = self.coupled_term(i);
        for j in self.montage.aunt_indices(i).to_vec() {
            self.coupled[j] = self.coupled_term(j);
        }
    }
}

/// Chains with the base-rate transition probabilities and emission weights,
/// ignoring the aunts.
fn uncoupled_chains(trans: &TransitionParams, data: &DataWeights) -> Vec<ChainParams> {
    let (g, h) = variational_transition_probs(trans, 0.0);
    data.log_lik
        .iter()
        .map(|frames| ChainParams {
            onset: vec![g; frames.len() - 1],
            offset: vec![h; frames.len() - 1],
            log_weights: frames.iter().map(|&[b, s]| [b, s, b]).collect(),
        })
        .collect()
}

/// Runs the E-step from uncoupled starting chains.
pub fn run_estep(model: &ChmmModel, feats: &FeatureSeries, config: &EStepConfig) -> Result<EStepOutput> {
    run_estep_from(model, feats, config, None)
}

/// Runs the E-step, starting from `init` chains when given.
///
/// Sweeps over channels in montage order, refitting one chain at a time,
/// until the relative change of the free energy over a sweep drops below
/// `config.tol` or `config.max_sweeps` is reached.
pub fn run_estep_from(
    model: &ChmmModel,
    feats: &FeatureSeries,
    config: &EStepConfig,
    init: Option<&[ChainParams]>,
) -> Result<EStepOutput> {
    model.check_features(feats)?;
    let data = set_data_weights(&model.emit, feats);
    let chains = match init {
        Some(c) => {
            if c.len() != model.montage.len() || c.iter().any(|ch| ch.n_frames() != feats.n_frames()) {
                return Err(Error::InvalidInput("initial chains do not match the features".into()));
            }
            c.to_vec()
        }
        None => uncoupled_chains(&model.trans, &data),
    };
    let posts = chains.iter().map(forward_backward).collect();
    let mut engine = Engine::new(&model.montage, &model.trans, &data, config.coupling, chains, posts);

    let initial = engine.total();
    if !initial.is_finite() {
        return Err(Error::Numerical(format!("initial free energy is {initial}")));
    }
    let mut trace = Vec::new();
    let mut prev = initial;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        for i in 0..model.montage.len() {
            let params = match config.rule {
                UpdateRule::Coordinate => engine.coordinate_params(i),
                UpdateRule::MeanActivation => engine.mean_activation_params(i, &model.trans),
            };
            engine.set_chain(i, params);
            let fe = engine.total();
            if !fe.is_finite() {
                return Err(Error::Numerical(format!(
                    "free energy became {fe} after updating channel {i} in sweep {sweeps}"
                )));
            }
            trace.push(FeTraceEntry {
                sweep: sweeps,
                channel: i,
                free_energy: fe,
            });
        }
        let fe = engine.total();
        let rel = (prev - fe).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = fe;
        if rel < config.tol {
            converged = true;
            break;
        }
    }

    let free_energy = engine.total();
    let stats = PosteriorStats::from_posteriors(&model.montage, &engine.posts);
    let log_z = engine.posts.iter().map(|p| p.log_z).collect();
    let chains = VariationalChains {
        chains: engine.chains,
        log_z,
        data: data.clone(),
    };
    Ok(EStepOutput {
        stats,
        chains,
        trace,
        initial_free_energy: initial,
        free_energy,
        sweeps,
        converged,
    })
}

/// `-E_Q[log p(X, Y)] + E_Q[log Q(X)]` for the factored distribution `q`
/// with summaries `stats`, under `model`.
pub fn free_energy(
    model: &ChmmModel,
    q: &VariationalChains,
    stats: &PosteriorStats,
    feats: &FeatureSeries,
    coupling: CouplingExpectation,
) -> Result<f64> {
    model.check_features(feats)?;
    let data = set_data_weights(&model.emit, feats);
    let posts = stats
        .gamma
        .iter()
        .zip(&stats.xi)
        .zip(&q.log_z)
        .map(|((g, x), &log_z)| ChainPosterior {
            gamma: g.clone(),
            xi: x.clone(),
            log_z,
        })
        .collect();
    let engine = Engine::new(&model.montage, &model.trans, &data, coupling, q.chains.clone(), posts);
    Ok(engine.total())
}
