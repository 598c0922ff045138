//! Framewise, channelwise reference classifiers.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::FrameLabels;
use crate::learning::{fit_logistic, fit_mixture, GaussianMixture, LogisticProblem, MixtureFitConfig, NewtonConfig, NewtonFit};
use crate::model::file::{join, parse_model_file, parse_vec, read_mixture, write_mixture, ModelDocument, MODEL_HEADER};
use crate::model::{sigmoid, DEFAULT_MIXTURES, VARIANCE_FLOOR};
use crate::signal::{FeatureSeries, FeatureVector, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub mixtures: usize,
    pub variance_floor: f64,
    pub seed: u64,
    /// Weight the likelihood ratio by the training class frequencies
    /// instead of equal priors.
    pub prevalence_prior: bool,
    /// Fit one logistic regression per channel instead of a shared one.
    pub per_channel_logreg: bool,
    pub newton_max_iters: usize,
    pub newton_grad_tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            mixtures: DEFAULT_MIXTURES,
            variance_floor: VARIANCE_FLOOR,
            seed: 0,
            prevalence_prior: false,
            per_channel_logreg: false,
            newton_max_iters: 50,
            newton_grad_tol: 1e-8,
        }
    }
}

/// Labeled frames of each channel, pooled over recordings, split by class.
fn pooled_frames<'a>(
    data: &[(&'a FeatureSeries, &'a FrameLabels)],
    channels: &[String],
) -> Result<Vec<(Vec<FeatureVector>, Vec<FeatureVector>)>> {
    channels
        .iter()
        .map(|name| {
            let mut seiz = Vec::new();
            let mut base = Vec::new();
            for (feats, labels) in data {
                let c = feats.channel_index(name)?;
                let lab = &labels.labels[c];
                if lab.len() != feats.frames[c].len() {
                    return Err(Error::InvalidInput(format!("labels of `{name}` do not match its frames")));
                }
                for (y, &l) in feats.frames[c].iter().zip(lab) {
                    if l {
                        seiz.push(*y);
                    } else {
                        base.push(*y);
                    }
                }
            }
            Ok((seiz, base))
        })
        .collect()
}

fn training_channels(data: &[(&FeatureSeries, &FrameLabels)]) -> Result<Vec<String>> {
    data.first()
        .map(|(f, _)| f.channels.clone())
        .ok_or_else(|| Error::InvalidInput("no training recordings".into()))
}

/// Per-channel class-conditional mixtures compared by likelihood ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmClassifier {
    pub channels: Vec<String>,
    pub seizure: Vec<GaussianMixture>,
    pub baseline: Vec<GaussianMixture>,
    /// Log prior odds of seizure per channel; zero for equal priors.
    pub log_prior_odds: Vec<f64>,
}

pub fn train_gmm_classifier(data: &[(&FeatureSeries, &FrameLabels)], config: &BaselineConfig) -> Result<GmmClassifier> {
    let channels = training_channels(data)?;
    let pooled = pooled_frames(data, &channels)?;
    let mut clf = GmmClassifier {
        channels: channels.clone(),
        seizure: Vec::new(),
        baseline: Vec::new(),
        log_prior_odds: Vec::new(),
    };
    for (i, (name, (seiz, base))) in channels.iter().zip(&pooled).enumerate() {
        for (class, frames) in [("seizure", seiz), ("non-seizure", base)] {
            if frames.len() < config.mixtures {
                return Err(Error::InsufficientData {
                    channel: name.clone(),
                    class,
                    needed: config.mixtures,
                    found: frames.len(),
                });
            }
        }
        let mix = |offset: u64| MixtureFitConfig {
            components: config.mixtures,
            variance_floor: config.variance_floor,
            seed: config.seed ^ (2 * i as u64 + offset + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..MixtureFitConfig::default()
        };
        clf.seizure.push(fit_mixture(seiz, &mix(0))?);
        clf.baseline.push(fit_mixture(base, &mix(1))?);
        clf.log_prior_odds.push(if config.prevalence_prior {
            (seiz.len() as f64 / base.len() as f64).ln()
        } else {
            0.0
        });
    }
    Ok(clf)
}

/// Posterior probability of seizure for `y` on channel index `channel`.
pub fn gmm_posterior(clf: &GmmClassifier, y: &FeatureVector, channel: usize) -> f64 {
    let l1 = clf.seizure[channel].log_likelihood(y);
    let l0 = clf.baseline[channel].log_likelihood(y);
    sigmoid(l1 - l0 + clf.log_prior_odds[channel])
}

/// Shared or per-channel logistic regression on the raw feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegClassifier {
    pub channels: Vec<String>,
    /// One coefficient vector `[bias, w_1, ..., w_5]`, or one per channel.
    pub coefficients: Vec<[f64; FEATURE_DIM + 1]>,
}

fn design_row(y: &FeatureVector) -> Vec<f64> {
    std::iter::once(1.0).chain(y.iter().copied()).collect()
}

/// Trains the regression and returns it with the Newton diagnostics of each fit.
pub fn train_logreg_with_diagnostics(
    data: &[(&FeatureSeries, &FrameLabels)],
    config: &BaselineConfig,
) -> Result<(LogRegClassifier, Vec<NewtonFit>)> {
    let channels = training_channels(data)?;
    let pooled = pooled_frames(data, &channels)?;
    let groups: Vec<Vec<usize>> = if config.per_channel_logreg {
        (0..channels.len()).map(|i| vec![i]).collect()
    } else {
        vec![(0..channels.len()).collect()]
    };
    let newton = NewtonConfig {
        max_iters: config.newton_max_iters,
        grad_tol: config.newton_grad_tol,
    };
    let mut coefficients = Vec::new();
    let mut fits = Vec::new();
    for g in groups {
        let mut problem = LogisticProblem::default();
        for &i in &g {
            let (seiz, base) = &pooled[i];
            for y in seiz {
                problem.push(design_row(y), 1.0, 1.0);
            }
            for y in base {
                problem.push(design_row(y), 1.0, 0.0);
            }
        }
        let n_pos: usize = g.iter().map(|&i| pooled[i].0.len()).sum();
        let n_neg: usize = g.iter().map(|&i| pooled[i].1.len()).sum();
        if n_pos == 0 {
            return Err(Error::MissingClass("seizure"));
        }
        if n_neg == 0 {
            return Err(Error::MissingClass("non-seizure"));
        }
        let fit = fit_logistic(&problem, &[0.0; FEATURE_DIM + 1], &newton)?;
        let mut c = [0.0; FEATURE_DIM + 1];
        c.copy_from_slice(&fit.beta);
        coefficients.push(c);
        fits.push(fit);
    }
    Ok((LogRegClassifier { channels, coefficients }, fits))
}

pub fn train_logreg(data: &[(&FeatureSeries, &FrameLabels)], config: &BaselineConfig) -> Result<LogRegClassifier> {
    train_logreg_with_diagnostics(data, config).map(|(clf, _)| clf)
}

pub fn logreg_posterior(clf: &LogRegClassifier, y: &FeatureVector, channel: usize) -> f64 {
    let c = if clf.coefficients.len() == 1 {
        &clf.coefficients[0]
    } else {
        &clf.coefficients[channel]
    };
    let z = c[0] + c[1..].iter().zip(y).map(|(w, x)| w * x).sum::<f64>();
    sigmoid(z)
}

/// A trained framewise baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Gmm(GmmClassifier),
    LogReg(LogRegClassifier),
}

impl Baseline {
    pub fn channels(&self) -> &[String] {
        match self {
            Baseline::Gmm(c) => &c.channels,
            Baseline::LogReg(c) => &c.channels,
        }
    }

    /// Seizure probability of every frame, in the classifier's channel order.
    pub fn score(&self, feats: &FeatureSeries) -> Result<Vec<Vec<f64>>> {
        self.channels()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let c = feats.channel_index(name)?;
                Ok(feats.frames[c]
                    .iter()
                    .map(|y| match self {
                        Baseline::Gmm(clf) => gmm_posterior(clf, y, i),
                        Baseline::LogReg(clf) => logreg_posterior(clf, y, i),
                    })
                    .collect())
            })
            .collect()
    }

    pub fn to_model_file(&self) -> String {
        match self {
            Baseline::Gmm(clf) => {
                let mut out = format!(
                    "{MODEL_HEADER}\nkind: gmm-lr\n[classifier]\nchannels = {}\nmixtures = {}\nlog_prior_odds = {}\n",
                    clf.channels.join(" "),
                    clf.seizure.first().map_or(0, GaussianMixture::n_components),
                    join(&clf.log_prior_odds)
                );
                for (name, (s, b)) in clf.channels.iter().zip(clf.seizure.iter().zip(&clf.baseline)) {
                    for (class, g) in [("seizure", s), ("baseline", b)] {
                        out.push_str(&format!("[{class} {name}]\n"));
                        write_mixture(&mut out, &g.means, &g.variances);
                        out.push_str(&format!("weights = {}\n", join(&g.weights)));
                    }
                }
                out
            }
            Baseline::LogReg(clf) => {
                let mut out = format!(
                    "{MODEL_HEADER}\nkind: logreg\n[classifier]\nchannels = {}\n[coefficients]\n",
                    clf.channels.join(" ")
                );
                if clf.coefficients.len() == 1 {
                    out.push_str(&format!("all = {}\n", join(&clf.coefficients[0])));
                } else {
                    for (name, c) in clf.channels.iter().zip(&clf.coefficients) {
                        out.push_str(&format!("{name} = {}\n", join(c)));
                    }
                }
                out
            }
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let head = doc.section("classifier")?;
        let (_, names) = head.get("channels")?;
        let channels: Vec<String> = names.split_whitespace().map(str::to_string).collect();
        match doc.kind.as_str() {
            "gmm-lr" => {
                let (ln, j) = head.get("mixtures")?;
                let j: usize = j
                    .parse()
                    .ok()
                    .filter(|&j| j >= 1)
                    .ok_or_else(|| Error::parse(ln, "mixtures must be a positive integer"))?;
                let log_prior_odds = head.get_vec("log_prior_odds")?;
                if log_prior_odds.len() != channels.len() {
                    return Err(Error::parse(head.line, "log_prior_odds must list one value per channel"));
                }
                let read = |class: &str| -> Result<Vec<GaussianMixture>> {
                    channels
                        .iter()
                        .map(|name| {
                            let sec = doc.section(&format!("{class} {name}"))?;
                            let (means, variances) = read_mixture(sec, j)?;
                            let weights = sec.get_vec("weights")?;
                            if weights.len() != j {
                                return Err(Error::parse(sec.line, format!("expected {j} weights")));
                            }
                            Ok(GaussianMixture { means, variances, weights })
                        })
                        .collect()
                };
                let seizure = read("seizure")?;
                let baseline = read("baseline")?;
                Ok(Baseline::Gmm(GmmClassifier {
                    channels,
                    seizure,
                    baseline,
                    log_prior_odds,
                }))
            }
            "logreg" => {
                let sec = doc.section("coefficients")?;
                let parse = |ln: usize, v: &str| -> Result<[f64; FEATURE_DIM + 1]> {
                    parse_vec(v, ln)?
                        .try_into()
                        .map_err(|_| Error::parse(ln, format!("expected {} coefficients", FEATURE_DIM + 1)))
                };
                let coefficients = match sec.get("all") {
                    Ok((ln, v)) => vec![parse(ln, v)?],
                    Err(_) => channels
                        .iter()
                        .map(|name| {
                            let (ln, v) = sec.get(name)?;
                            parse(ln, v)
                        })
                        .collect::<Result<_>>()?,
                };
                Ok(Baseline::LogReg(LogRegClassifier { channels, coefficients }))
            }
            other => Err(Error::InvalidInput(format!("`{other}` is not a baseline model kind"))),
        }
    }

    pub fn from_model_file(text: &str) -> Result<Self> {
        Self::from_document(&parse_model_file(text)?)
    }
}
