//! Detection metrics, ROC analysis and cross-validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{StateSequences, STATE_SEIZURE};
use crate::signal::{FeatureSeries, SeizureLabels};

/// Binary seizure indicator per channel and frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    /// `labels[i][t]`
    pub labels: Vec<Vec<bool>>,
}

impl FrameLabels {
    /// A frame is labeled seizure iff its start time lies in `[onset, offset)`
    /// of an interval covering its channel.
    pub fn from_intervals(labels: &SeizureLabels, channels: &[String], frame_starts: &[f64]) -> Self {
        let labels = channels
            .iter()
            .map(|c| frame_starts.iter().map(|&s| labels.is_seizure(c, s)).collect())
            .collect();
        FrameLabels { labels }
    }

    /// [`Self::from_intervals`] on the frames of `feats`.
    pub fn for_features(labels: &SeizureLabels, feats: &FeatureSeries) -> Self {
        Self::from_intervals(labels, &feats.channels, &feats.frame_start_seconds)
    }

    /// Frames whose latent state is seizure.
    pub fn from_states(states: &StateSequences) -> Self {
        FrameLabels {
            labels: states
                .states
                .iter()
                .map(|s| s.iter().map(|&x| x == STATE_SEIZURE).collect())
                .collect(),
        }
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l).count()
    }

    fn check_shape(&self, scores: &[Vec<f64>]) -> Result<()> {
        let same = scores.len() == self.labels.len()
            && scores.iter().zip(&self.labels).all(|(s, l)| s.len() == l.len());
        if same {
            Ok(())
        } else {
            Err(Error::InvalidInput("scores and labels differ in shape".into()))
        }
    }
}

/// Confidence-weighted true positive and true negative rates.
pub fn weighted_rates(posteriors: &[Vec<f64>], labels: &FrameLabels) -> Result<(f64, f64)> {
    labels.check_shape(posteriors)?;
    let (mut tp, mut np, mut tn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (p, l) in posteriors.iter().flatten().zip(labels.labels.iter().flatten()) {
        if *l {
            tp += p;
            np += 1;
        } else {
            tn += 1.0 - p;
            nn += 1;
        }
    }
    if np == 0 {
        return Err(Error::MissingClass("seizure"));
    }
    if nn == 0 {
        return Err(Error::MissingClass("non-seizure"));
    }
    Ok((tp / np as f64, tn / nn as f64))
}

/// Area under the ROC curve via the Mann-Whitney statistic; ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::MissingClass("seizure"));
    }
    if n_neg == 0 {
        return Err(Error::MissingClass("non-seizure"));
    }
    // Sum of positive midranks.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        let pos = order[start..end].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * pos as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC operating points `(fpr, tpr)` from the highest threshold down,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    auc(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        points.push((fp / n_neg, tp / n_pos));
    }
    Ok(points)
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in points {
        out.push_str(&format!("{f},{t}\n"));
    }
    out
}

/// Test and training indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n` into `k` folds of near-equal size after a seeded shuffle.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} recordings cannot fill {k} folds")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let mut test = ids[lo..hi].to_vec();
            test.sort_unstable();
            let mut train: Vec<usize> = ids[..lo].iter().chain(&ids[hi..]).copied().collect();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect();
    Ok(folds)
}

/// Scores and labels of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecording {
    pub scores: Vec<Vec<f64>>,
    pub labels: FrameLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AucMode {
    /// One AUC over all frames of all recordings.
    #[default]
    Pooled,
    /// Mean of per-recording AUCs, skipping recordings with one class.
    PerRecording,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub fold: String,
    pub model: String,
    pub tpr: f64,
    pub tnr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,model,tpr,tnr,auc\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.fold, r.model, r.tpr, r.tnr, r.auc));
        }
        out
    }
}

/// TPR, TNR and AUC over a group of recordings.
pub fn evaluate_recordings(recs: &[&ScoredRecording], mode: AucMode) -> Result<(f64, f64, f64)> {
    let scores: Vec<Vec<f64>> = recs.iter().flat_map(|r| r.scores.iter().cloned()).collect();
    let labels = FrameLabels {
        labels: recs.iter().flat_map(|r| r.labels.labels.iter().cloned()).collect(),
    };
    let (tpr, tnr) = weighted_rates(&scores, &labels)?;
    let area = match mode {
        AucMode::Pooled => {
            let s: Vec<f64> = scores.iter().flatten().copied().collect();
            let l: Vec<bool> = labels.labels.iter().flatten().copied().collect();
            auc(&s, &l)?
        }
        AucMode::PerRecording => {
            let areas: Vec<f64> = recs
                .iter()
                .filter_map(|r| {
                    let s: Vec<f64> = r.scores.iter().flatten().copied().collect();
                    let l: Vec<bool> = r.labels.labels.iter().flatten().copied().collect();
                    auc(&s, &l).ok()
                })
                .collect();
            if areas.is_empty() {
                return Err(Error::MissingClass("seizure"));
            }
            areas.iter().sum::<f64>() / areas.len() as f64
        }
    };
    Ok((tpr, tnr, area))
}

/// One metrics row per fold (recordings grouped by `fold_of`) plus a pooled row.
pub fn fold_metrics(model: &str, recs: &[ScoredRecording], fold_of: &[usize], mode: AucMode) -> Result<MetricsReport> {
    if fold_of.len() != recs.len() {
        return Err(Error::InvalidInput("fold assignment does not cover every recording".into()));
    }
    let mut folds: Vec<usize> = fold_of.to_vec();
    folds.sort_unstable();
    folds.dedup();
    let mut rows = Vec::new();
    for f in folds {
        let group: Vec<&ScoredRecording> = recs.iter().zip(fold_of).filter(|(_, &g)| g == f).map(|(r, _)| r).collect();
        let (tpr, tnr, auc) = evaluate_recordings(&group, mode)?;
        rows.push(MetricsRow {
            fold: f.to_string(),
            model: model.to_string(),
            tpr,
            tnr,
            auc,
        });
    }
    let all: Vec<&ScoredRecording> = recs.iter().collect();
    let (tpr, tnr, auc) = evaluate_recordings(&all, mode)?;
    rows.push(MetricsRow {
        fold: "pooled".into(),
        model: model.to_string(),
        tpr,
        tnr,
        auc,
    });
    Ok(MetricsReport { rows })
}

/// Runs `k`-fold cross-validation: `fit_and_score(train, test)` trains on the
/// `train` indices and returns scores for each `test` recording, in order.
pub fn cross_validate<F>(
    model: &str,
    labels: &[FrameLabels],
    k: usize,
    seed: u64,
    mode: AucMode,
    mut fit_and_score: F,
) -> Result<MetricsReport>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<Vec<Vec<f64>>>>,
{
    let folds = kfold_split(labels.len(), k, seed)?;
    let mut scored: Vec<Option<ScoredRecording>> = vec![None; labels.len()];
    let mut fold_of = vec![0; labels.len()];
    for (f, fold) in folds.iter().enumerate() {
        let scores = fit_and_score(&fold.train, &fold.test)?;
        if scores.len() != fold.test.len() {
            return Err(Error::InvalidInput("scorer returned the wrong number of recordings".into()));
        }
        for (&r, s) in fold.test.iter().zip(scores) {
            scored[r] = Some(ScoredRecording {
                scores: s,
                labels: labels[r].clone(),
            });
            fold_of[r] = f;
        }
    }
    let scored: Vec<ScoredRecording> = scored.into_iter().map(|s| s.expect("every recording is tested once")).collect();
    fold_metrics(model, &scored, &fold_of, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_hand_example() {
        let labels = FrameLabels {
            labels: vec![vec![true, false]],
        };
        let (tpr, tnr) = weighted_rates(&[vec![0.9, 0.2]], &labels).unwrap();
        assert!((tpr - 0.9).abs() < 1e-15 && (tnr - 0.8).abs() < 1e-15);
        let (tpr, tnr) = weighted_rates(&[vec![0.5, 0.5]], &labels).unwrap();
        assert_eq!((tpr, tnr), (0.5, 0.5));
        let none = FrameLabels {
            labels: vec![vec![false, false]],
        };
        assert!(matches!(weighted_rates(&[vec![0.1, 0.2]], &none), Err(Error::MissingClass("seizure"))));
    }

    #[test]
    fn auc_hand_example_and_ties() {
        let a = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0, 0.1, 0.9, 1.0], &[false, false, true, true]).unwrap(), 1.0);
        assert!(auc(&[0.1], &[true]).is_err());
    }

    #[test]
    fn roc_ends_at_corners() {
        let pts = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        // trapezoid area equals the rank statistic
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - 0.75).abs() < 1e-15);
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_split(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.train.len(), 8);
            assert!(f.test.iter().all(|t| !f.train.contains(t)));
        }
        assert_eq!(folds, kfold_split(10, 5, 3).unwrap());
        assert!(kfold_split(3, 5, 0).is_err());
    }
}
