//! Variational EM over a set of training recordings.

use rayon::prelude::*;

use super::emissions::{init_from_annotations, update_emission_params};
use super::transitions::{fit_transition_params, TransitionDesignMatrix};
use super::EmConfig;
use crate::error::{Error, Result};
use crate::eval::FrameLabels;
use crate::inference::{free_energy, mixture_responsibilities, run_estep_from, EStepOutput};
use crate::model::{ChmmModel, TransitionParams};
use crate::montage::MontageGraph;
use crate::signal::FeatureSeries;

/// Relative free-energy increase tolerated across an M-step.
const BOUND_SLACK: f64 = 1e-6;

/// Features of one recording with its frame annotations.
#[derive(Debug, Clone)]
pub struct TrainingRecording {
    pub features: FeatureSeries,
    pub labels: FrameLabels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmIteration {
    pub iter: usize,
    pub total_free_energy: f64,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: ChmmModel,
    /// Total free energy after the initial E-step (iteration 0) and after each EM iteration.
    pub trace: Vec<EmIteration>,
    pub converged: bool,
}

impl EmFit {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,total_free_energy\n");
        for e in &self.trace {
            out.push_str(&format!("{},{}\n", e.iter, e.total_free_energy));
        }
        out
    }
}

/// Initializes emissions from the annotations and transitions at
/// [`TransitionParams::INITIAL`], then runs EM without further use of the labels.
pub fn run_em(data: &[TrainingRecording], montage: &MontageGraph, config: &EmConfig) -> Result<EmFit> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no training recordings".into()));
    }
    let aligned: Vec<FeatureSeries> = data
        .iter()
        .map(|r| r.features.aligned_to(montage))
        .collect::<Result<_>>()?;
    let labeled: Vec<(&FeatureSeries, &FrameLabels)> = data.iter().map(|r| (&r.features, &r.labels)).collect();
    let emit = init_from_annotations(&labeled, montage, config)?;
    let model = ChmmModel::new(montage.clone(), TransitionParams::INITIAL, emit)?;
    run_em_from(model, &aligned, config)
}

fn total(outs: &[EStepOutput]) -> f64 {
    outs.iter().map(|o| o.free_energy).sum()
}

/// Runs EM from `model` on features already in montage order.
pub fn run_em_from(mut model: ChmmModel, feats: &[FeatureSeries], config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    let estep = config.estep();
    let mut outs: Vec<EStepOutput> = feats
        .par_iter()
        .map(|f| run_estep_from(&model, f, &estep, None))
        .collect::<Result<_>>()?;
    let mut prev = total(&outs);
    let mut trace = vec![EmIteration {
        iter: 0,
        total_free_energy: prev,
    }];
    let mut converged = false;
    for iter in 1..=config.em_max_iters {
        let emit = if config.freeze_emissions {
            model.emit.clone()
        } else {
            let resps: Vec<_> = outs
                .par_iter()
                .zip(feats)
                .map(|(o, f)| mixture_responsibilities(&model.emit, f, &o.stats))
                .collect();
            let pairs: Vec<_> = resps.iter().zip(feats).collect();
            update_emission_params(&model.emit, &pairs, config)
        };
        let designs: Vec<_> = outs
            .par_iter()
            .map(|o| TransitionDesignMatrix::from_posteriors(&model.montage, &o.stats, config.coupling))
            .collect();
        let trans = fit_transition_params(&TransitionDesignMatrix::pooled(&designs), &model.trans, config)?;
        let next = ChmmModel::new(model.montage.clone(), trans, emit)?;

        let after_m: f64 = outs
            .par_iter()
            .zip(feats)
            .map(|(o, f)| free_energy(&next, &o.chains, &o.stats, f, config.coupling))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        if !after_m.is_finite() {
            return Err(Error::Numerical(format!("free energy became {after_m} after M-step {iter}")));
        }
        if after_m - prev > BOUND_SLACK * prev.abs() {
            return Err(Error::BoundViolation {
                iteration: iter,
                before: prev,
                after: after_m,
            });
        }
        model = next;
        outs = outs
            .par_iter()
            .zip(feats)
            .map(|(o, f)| run_estep_from(&model, f, &estep, Some(&o.chains.chains)))
            .collect::<Result<_>>()?;
        let fe = total(&outs);
        if fe - prev > BOUND_SLACK * prev.abs() {
            return Err(Error::BoundViolation {
                iteration: iter,
                before: prev,
                after: fe,
            });
        }
        trace.push(EmIteration {
            iter,
            total_free_energy: fe,
        });
        let rel = (prev - fe).abs() / prev.abs().max(f64::MIN_POSITIVE);
        log::info!("EM iteration {iter}: free energy {fe:.6}, relative change {rel:.3e}");
        prev = fe;
        if rel < config.em_tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        model,
        trace,
        converged,
    })
}
