//! Newton's method for weighted (soft-count) logistic regression.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{log_sigmoid, sigmoid};

/// Largest coefficient magnitude before the data are treated as separable.
pub const SEPARATION_LIMIT: f64 = 30.0;

/// Rows of covariates with a trial weight and a success mass `0 <= outcome <= weight`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogisticProblem {
    pub covariates: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub outcomes: Vec<f64>,
}

impl LogisticProblem {
    pub fn push(&mut self, x: Vec<f64>, weight: f64, outcome: f64) {
        self.covariates.push(x);
        self.weights.push(weight);
        self.outcomes.push(outcome);
    }

    pub fn dim(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    fn linear(x: &[f64], beta: &[f64]) -> f64 {
        x.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// `sum y log s(z) + (w - y) log(1 - s(z))`.
    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.covariates
            .iter()
            .zip(self.weights.iter().zip(&self.outcomes))
            .map(|(x, (&w, &y))| {
                let z = Self::linear(x, beta);
                let mut acc = 0.0;
                if y > 0.0 {
                    acc += y * log_sigmoid(z);
                }
                if w - y > 0.0 {
                    acc += (w - y) * log_sigmoid(-z);
                }
                acc
            })
            .sum()
    }

    /// Gradient of [`Self::log_likelihood`].
    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; beta.len()];
        for (x, (&w, &y)) in self.covariates.iter().zip(self.weights.iter().zip(&self.outcomes)) {
            let r = y - w * sigmoid(Self::linear(x, beta));
            for (gk, xk) in g.iter_mut().zip(x) {
                *gk += r * xk;
            }
        }
        g
    }

    /// Negated Hessian of [`Self::log_likelihood`] (positive semidefinite).
    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        let p = beta.len();
        let mut h = DMatrix::zeros(p, p);
        for (x, &w) in self.covariates.iter().zip(&self.weights) {
            let s = sigmoid(Self::linear(x, beta));
            let c = w * s * (1.0 - s);
            for a in 0..p {
                for b in 0..p {
                    h[(a, b)] += c * x[a] * x[b];
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iters: 50,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonFit {
    pub beta: Vec<f64>,
    pub iterations: usize,
    /// Gradient infinity norm over the identifiable coordinates at each iterate.
    pub trace: Vec<f64>,
    /// Coefficients were rescaled because the data are (nearly) separable.
    pub clamped: bool,
    /// Coordinates with no information in the data, left at their initial values.
    pub fixed: Vec<bool>,
}

fn inf_norm(v: &[f64], fixed: &[bool]) -> f64 {
    v.iter()
        .zip(fixed)
        .filter(|(_, &f)| !f)
        .fold(0.0, |m, (g, _)| m.max(g.abs()))
}

/// Maximizes the weighted logistic log-likelihood from `init`.
pub fn fit_logistic(problem: &LogisticProblem, init: &[f64], config: &NewtonConfig) -> Result<NewtonFit> {
    let p = init.len();
    if problem.covariates.iter().any(|x| x.len() != p) {
        return Err(Error::InvalidInput("covariate rows differ in length from the coefficients".into()));
    }
    let mut beta = init.to_vec();
    let info = problem.information(&beta);
    let max_diag = (0..p).map(|k| info[(k, k)]).fold(0.0, f64::max);
    let fixed: Vec<bool> = (0..p).map(|k| !(info[(k, k)] > 1e-12 * max_diag) || max_diag == 0.0).collect();
    let free: Vec<usize> = (0..p).filter(|&k| !fixed[k]).collect();
    let mut trace = Vec::new();
    let done = |beta: Vec<f64>, iterations, trace, clamped| NewtonFit {
        beta,
        iterations,
        trace,
        clamped,
        fixed: fixed.clone(),
    };
    if free.is_empty() {
        return Ok(done(beta, 0, trace, false));
    }

    let mut obj = problem.log_likelihood(&beta);
    for iter in 0..=config.max_iters {
        let grad = problem.gradient(&beta);
        let gnorm = inf_norm(&grad, &fixed);
        if !gnorm.is_finite() || !obj.is_finite() {
            return Err(Error::Numerical(format!("non-finite logistic objective at iteration {iter}")));
        }
        trace.push(gnorm);
        if gnorm < config.grad_tol {
            return Ok(done(beta, iter, trace, false));
        }
        if iter == config.max_iters {
            break;
        }
        let info = problem.information(&beta);
        let h = DMatrix::from_fn(free.len(), free.len(), |a, b| info[(free[a], free[b])]);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite Hessian at Newton iteration {iter}")));
        }
        let g = DVector::from_iterator(free.len(), free.iter().map(|&k| grad[k]));
        let step = solve_damped(&h, &g)
            .ok_or_else(|| Error::Numerical(format!("singular Hessian at Newton iteration {iter}")))?;

        let slope: f64 = step.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = beta.clone();
            for (a, &k) in free.iter().enumerate() {
                cand[k] += t * step[a];
            }
            let val = problem.log_likelihood(&cand);
            // Near the optimum the objective is flat to rounding; a smaller
            // gradient then decides.
            let flat = val >= obj - 64.0 * f64::EPSILON * (1.0 + obj.abs())
                && inf_norm(&problem.gradient(&cand), &fixed) < gnorm;
            if val.is_finite() && (val >= obj + 1e-4 * t * slope || flat) {
                accepted = Some((cand, val));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, val)) = accepted else {
            let scale = 1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
            if step.amax() <= 1e-14 * scale * 1e6 {
                // no further progress is representable
                return Ok(done(beta, iter, trace, false));
            }
            return Err(Error::NewtonNonConvergence {
                iterations: iter,
                trace,
            });
        };
        let moved = cand.iter().zip(&beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = 1.0 + cand.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        beta = cand;
        obj = val;
        let largest = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if largest > SEPARATION_LIMIT {
            let s = SEPARATION_LIMIT / largest;
            beta.iter_mut().for_each(|b| *b *= s);
            warn!("logistic regression looks separable; coefficients clamped to magnitude {SEPARATION_LIMIT}");
            trace.push(inf_norm(&problem.gradient(&beta), &fixed));
            return Ok(done(beta, iter + 1, trace, true));
        }
        if moved <= 1e-14 * scale {
            trace.push(inf_norm(&problem.gradient(&beta), &fixed));
            return Ok(done(beta, iter + 1, trace, false));
        }
    }
    Err(Error::NewtonNonConvergence {
        iterations: config.max_iters,
        trace,
    })
}

/// Solves `h x = g`, adding a small ridge when `h` is not numerically
/// positive definite.
fn solve_damped(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-12 * scale;
    for _ in 0..30 {
        let damped = h + DMatrix::identity(h.nrows(), h.ncols()) * ridge;
        if let Some(ch) = damped.cholesky() {
            return Some(ch.solve(g));
        }
        ridge *= 10.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logit;

    #[test]
    fn intercept_only_matches_closed_form() {
        let mut p = LogisticProblem::default();
        p.push(vec![1.0, 0.0], 400.0, 37.0);
        p.push(vec![1.0, 0.0], 600.0, 3.0);
        let fit = fit_logistic(&p, &[-7.0, 2.0], &NewtonConfig::default()).unwrap();
        assert!((fit.beta[0] - logit(0.04)).abs() < 1e-10);
        assert_eq!(fit.beta[1], 2.0);
        assert_eq!(fit.fixed, vec![false, true]);
        assert!(*fit.trace.last().unwrap() < 1e-8);
    }

    #[test]
    fn separable_data_are_clamped() {
        let mut p = LogisticProblem::default();
        for x in [-2.0, -1.0, -0.5] {
            p.push(vec![1.0, x], 1.0, 0.0);
        }
        for x in [0.5, 1.0, 2.0] {
            p.push(vec![1.0, x], 1.0, 1.0);
        }
        let fit = fit_logistic(&p, &[0.0, 0.0], &NewtonConfig::default()).unwrap();
        assert!(fit.clamped);
        assert!((fit.beta[1].abs() - SEPARATION_LIMIT).abs() < 1e-9);
    }
}
