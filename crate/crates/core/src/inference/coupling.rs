//! Expected log transition probabilities when the aunt count is random.
//!
//! Under the factored posterior each aunt is independently in the seizure
//! state with its own marginal probability, so the aunt count follows a
//! Poisson-binomial distribution.

use crate::model::{log_sigmoid, TransitionParams};

/// How `E[log A(eta)]` is evaluated under the aunts' marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingExpectation {
    /// Exact expectation over the aunt-count distribution.
    #[default]
    Exact,
    /// `log A(E[eta])`, the mean-activation surrogate.
    MeanActivation,
}

/// Expected log entries of the four free transition probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpectedLogTransitions {
    /// `E log(1 - g)`
    pub stay_pre: f64,
    /// `E log g`
    pub onset: f64,
    /// `E log(1 - h)`
    pub stay_seizure: f64,
    /// `E log h`
    pub offset: f64,
}

impl ExpectedLogTransitions {
    /// `sum xi(k, k') E log A(k, k')` over the allowed transitions.
    #[inline]
    pub fn dot(&self, xi: &[[f64; 3]; 3]) -> f64 {
        xi[0][0] * self.stay_pre
            + xi[0][1] * self.onset
            + xi[1][1] * self.stay_seizure
            + xi[1][2] * self.offset
    }
}

/// Log transition entries tabulated for integer aunt counts.
#[derive(Debug, Clone)]
pub struct CouplingTable {
    trans: TransitionParams,
    entries: Vec<ExpectedLogTransitions>,
}

impl CouplingTable {
    pub fn new(trans: &TransitionParams, max_count: usize) -> Self {
        let entries = (0..=max_count + 1)
            .map(|m| Self::at(trans, m as f64))
            .collect();
        CouplingTable {
            trans: *trans,
            entries,
        }
    }

    /// Log entries at a (possibly fractional) aunt count.
    pub fn at(trans: &TransitionParams, eta: f64) -> ExpectedLogTransitions {
        let zg = trans.onset_logit(eta);
        let zh = trans.offset_logit(eta);
        ExpectedLogTransitions {
            stay_pre: log_sigmoid(-zg),
            onset: log_sigmoid(zg),
            stay_seizure: log_sigmoid(-zh),
            offset: log_sigmoid(zh),
        }
    }

    pub fn at_mean(&self, eta: f64) -> ExpectedLogTransitions {
        Self::at(&self.trans, eta)
    }

    /// Expectation under `dist` (probabilities of counts 0, 1, ...), with
    /// every count shifted up by `shift`.
    pub fn expected(&self, dist: &[f64], shift: usize) -> ExpectedLogTransitions {
        let mut e = ExpectedLogTransitions::default();
        for (m, &p) in dist.iter().enumerate() {
            let l = self.entry(m + shift);
            e.stay_pre += p * l.stay_pre;
            e.onset += p * l.onset;
            e.stay_seizure += p * l.stay_seizure;
            e.offset += p * l.offset;
        }
        e
    }

    fn entry(&self, m: usize) -> ExpectedLogTransitions {
        match self.entries.get(m) {
            Some(e) => *e,
            None => Self::at(&self.trans, m as f64),
        }
    }
}

/// Distribution of the number of successes among independent Bernoulli
/// trials with the given probabilities, written into `out`.
pub fn poisson_binomial(probs: impl IntoIterator<Item = f64>, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for p in probs {
        out.push(0.0);
        for m in (1..out.len()).rev() {
            out[m] = out[m] * (1.0 - p) + out[m - 1] * p;
        }
        out[0] *= 1.0 - p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_binomial_matches_enumeration() {
        let probs = [0.1, 0.5, 0.93, 0.0, 1.0];
        let mut dist = Vec::new();
        poisson_binomial(probs, &mut dist);
        let mut brute = vec![0.0; probs.len() + 1];
        for mask in 0u32..(1 << probs.len()) {
            let mut p = 1.0;
            for (k, &q) in probs.iter().enumerate() {
                p *= if mask & (1 << k) != 0 { q } else { 1.0 - q };
            }
            brute[mask.count_ones() as usize] += p;
        }
        for (a, b) in dist.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_distribution_reduces_to_point_value() {
        let trans = TransitionParams::INITIAL;
        let table = CouplingTable::new(&trans, 4);
        let mut dist = Vec::new();
        poisson_binomial([1.0, 1.0, 0.0], &mut dist);
        let e = table.expected(&dist, 0);
        assert!((e.onset - log_sigmoid(-7.0 + 4.0)).abs() < 1e-15);
        let e1 = table.expected(&dist, 1);
        assert!((e1.onset - log_sigmoid(-7.0 + 6.0)).abs() < 1e-15);
    }
}
