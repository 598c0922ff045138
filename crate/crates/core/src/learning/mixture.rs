//! Diagonal Gaussian mixture fitting: k-means++ seeding followed by EM.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{diag_gaussian_log_density, log_sum_exp};
use crate::signal::{FeatureVector, FEATURE_DIM};

/// Soft count below which a component keeps its previous parameters.
pub const EMPTY_COMPONENT_MASS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub means: Vec<FeatureVector>,
    pub variances: Vec<FeatureVector>,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    /// `log w_j + log N(y; mean_j, var_j)` for each component.
    pub fn weighted_log_densities(&self, y: &FeatureVector) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .zip(&self.weights)
            .map(|((m, v), &w)| {
                if w > 0.0 {
                    w.ln() + diag_gaussian_log_density(y, m, v)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    pub fn log_likelihood(&self, y: &FeatureVector) -> f64 {
        log_sum_exp(&self.weighted_log_densities(y))
    }

    /// Posterior component probabilities for `y`.
    pub fn responsibilities(&self, y: &FeatureVector) -> Vec<f64> {
        let l = self.weighted_log_densities(y);
        let z = log_sum_exp(&l);
        l.iter().map(|v| (v - z).exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureFitConfig {
    pub components: usize,
    /// Relative change in total log-likelihood that ends EM.
    pub tol: f64,
    pub max_iters: usize,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for MixtureFitConfig {
    fn default() -> Self {
        MixtureFitConfig {
            components: 3,
            tol: 1e-6,
            max_iters: 200,
            variance_floor: crate::model::VARIANCE_FLOOR,
            seed: 0,
        }
    }
}

fn sq_dist(a: &FeatureVector, b: &FeatureVector) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first center uniformly at random, each further
/// center with probability proportional to its squared distance from the
/// nearest chosen center.
pub fn kmeans_pp_seeds(data: &[FeatureVector], k: usize, rng: &mut impl Rng) -> Vec<FeatureVector> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|y| sq_dist(y, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = data.len() - 1;
            for (n, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    idx = n;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick];
        for (d, y) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(y, &c));
        }
        centers.push(c);
    }
    centers
}

/// Weighted mean and variance of `data` per dimension.
pub(crate) fn moments(data: &[FeatureVector], weights: impl Fn(usize) -> f64) -> (f64, FeatureVector, FeatureVector) {
    let mut mass = 0.0;
    let mut mean = [0.0; FEATURE_DIM];
    for (n, y) in data.iter().enumerate() {
        let w = weights(n);
        mass += w;
        for d in 0..FEATURE_DIM {
            mean[d] += w * y[d];
        }
    }
    if mass > 0.0 {
        mean.iter_mut().for_each(|m| *m /= mass);
    }
    let mut var = [0.0; FEATURE_DIM];
    for (n, y) in data.iter().enumerate() {
        let w = weights(n);
        for d in 0..FEATURE_DIM {
            var[d] += w * (y[d] - mean[d]).powi(2);
        }
    }
    if mass > 0.0 {
        var.iter_mut().for_each(|v| *v /= mass);
    }
    (mass, mean, var)
}

/// Fits a diagonal mixture to `data`. Deterministic given `config.seed`.
pub fn fit_mixture(data: &[FeatureVector], config: &MixtureFitConfig) -> Result<GaussianMixture> {
    let k = config.components;
    if k == 0 {
        return Err(Error::InvalidInput("a mixture needs at least one component".into()));
    }
    if data.len() < k {
        return Err(Error::InvalidInput(format!("{} points cannot seed {k} components", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (_, _, global_var) = moments(data, |_| 1.0);
    let floored = global_var.map(|v| v.max(config.variance_floor));
    let mut gmm = GaussianMixture {
        means: kmeans_pp_seeds(data, k, &mut rng),
        variances: vec![floored; k],
        weights: vec![1.0 / k as f64; k],
    };

    let mut resp = vec![vec![0.0; k]; data.len()];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..config.max_iters {
        let mut total = 0.0;
        for (r, y) in resp.iter_mut().zip(data) {
            let l = gmm.weighted_log_densities(y);
            let z = log_sum_exp(&l);
            total += z;
            for (rj, lj) in r.iter_mut().zip(&l) {
                *rj = (lj - z).exp();
            }
        }
        if !total.is_finite() {
            return Err(Error::Numerical("mixture log-likelihood is not finite".into()));
        }
        let converged = (total - prev).abs() <= config.tol * total.abs();
        prev = total;
        if converged {
            break;
        }
        let n = data.len() as f64;
        for j in 0..k {
            let (mass, mean, var) = moments(data, |t| resp[t][j]);
            if mass < EMPTY_COMPONENT_MASS {
                warn!("mixture component {j} is empty; keeping its previous parameters");
                continue;
            }
            gmm.means[j] = mean;
            gmm.variances[j] = var.map(|v| v.max(config.variance_floor));
            gmm.weights[j] = mass / n;
        }
        let wsum: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    Ok(gmm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_is_sample_moments() {
        let data: Vec<FeatureVector> = (0..10).map(|i| [i as f64, (i * i) as f64, 1.0, -2.0, 0.5 * i as f64]).collect();
        let g = fit_mixture(&data, &MixtureFitConfig { components: 1, ..Default::default() }).unwrap();
        assert!((g.means[0][0] - 4.5).abs() < 1e-12);
        assert!((g.variances[0][0] - 8.25).abs() < 1e-12);
        assert_eq!(g.variances[0][2], crate::model::VARIANCE_FLOOR);
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn identical_points_give_uniform_weights() {
        let data = vec![[1.0; FEATURE_DIM]; 20];
        let g = fit_mixture(&data, &MixtureFitConfig::default()).unwrap();
        for (w, v) in g.weights.iter().zip(&g.variances) {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
            assert!(v.iter().all(|&x| x == crate::model::VARIANCE_FLOOR));
        }
    }
}
