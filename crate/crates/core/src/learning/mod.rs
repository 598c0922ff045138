//! Parameter learning: supervised initialization, M-step updates and the
//! variational EM driver.

mod em;
mod emissions;
mod mixture;
mod newton;
mod transitions;

pub use em::{run_em, run_em_from, EmFit, EmIteration, TrainingRecording};
pub use emissions::{init_from_annotations, update_emission_params};
pub use mixture::{fit_mixture, kmeans_pp_seeds, GaussianMixture, MixtureFitConfig, EMPTY_COMPONENT_MASS};
pub use newton::{fit_logistic, LogisticProblem, NewtonConfig, NewtonFit, SEPARATION_LIMIT};
pub use transitions::{fit_transition_params, DesignRow, TransitionDesignMatrix};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::inference::{CouplingExpectation, EStepConfig, UpdateRule};
use crate::model::{DEFAULT_MIXTURES, VARIANCE_FLOOR};

/// Settings for initialization, EM and the Newton regressions.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub mixtures: usize,
    pub estep_tol: f64,
    pub estep_max_sweeps: usize,
    pub em_max_iters: usize,
    /// Relative change in total free energy that ends EM.
    pub em_tol: f64,
    pub newton_max_iters: usize,
    pub newton_grad_tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
    /// Keep the annotation-initialized emissions fixed during EM.
    pub freeze_emissions: bool,
    pub update_rule: UpdateRule,
    pub coupling: CouplingExpectation,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            mixtures: DEFAULT_MIXTURES,
            estep_tol: 1e-4,
            estep_max_sweeps: 50,
            em_max_iters: 30,
            em_tol: 1e-5,
            newton_max_iters: 50,
            newton_grad_tol: 1e-8,
            variance_floor: VARIANCE_FLOOR,
            seed: 0,
            freeze_emissions: false,
            update_rule: UpdateRule::default(),
            coupling: CouplingExpectation::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.estep_tol, self.em_tol, self.newton_grad_tol, self.variance_floor];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("tolerances and the variance floor must be positive".into()));
        }
        if self.mixtures == 0 {
            return Err(Error::InvalidInput("mixtures must be at least 1".into()));
        }
        Ok(())
    }

    pub fn estep(&self) -> EStepConfig {
        EStepConfig {
            tol: self.estep_tol,
            max_sweeps: self.estep_max_sweeps,
            rule: self.update_rule,
            coupling: self.coupling,
        }
    }

    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            max_iters: self.newton_max_iters,
            grad_tol: self.newton_grad_tol,
        }
    }

    pub(crate) fn mixture(&self, seed: u64) -> MixtureFitConfig {
        MixtureFitConfig {
            components: self.mixtures,
            variance_floor: self.variance_floor,
            seed,
            ..MixtureFitConfig::default()
        }
    }

    /// Seed for the mixture fit of channel `channel`.
    pub(crate) fn channel_seed(&self, channel: usize) -> u64 {
        self.seed ^ (channel as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}
