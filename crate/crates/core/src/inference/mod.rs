//! Structured variational inference over the coupled chains.

mod coupling;
mod estep;
mod forward_backward;

pub use coupling::{poisson_binomial, CouplingExpectation, CouplingTable, ExpectedLogTransitions};
pub use estep::{
    expected_aunt_counts, free_energy, run_estep, run_estep_from, set_data_weights,
    update_chain_transitions, variational_transition_probs, DataWeights, EStepConfig, EStepOutput,
    FeTraceEntry, PosteriorStats, UpdateRule, VariationalChains,
};
pub use forward_backward::{clamp_prob, forward_backward, ChainParams, ChainPosterior, PROB_CEIL, PROB_FLOOR};

use crate::error::{Error, Result};
use crate::model::{EmissionModel, N_STATES};
use crate::signal::io::{expect_header, number, records};
use crate::signal::FeatureSeries;

/// `tau[i][t][j][k]`: probability that channel `i` at frame `t` is in state
/// `k` and drew mixture component `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub tau: Vec<Vec<Vec<[f64; N_STATES]>>>,
}

/// Splits each state marginal across mixture components in proportion to
/// the component's weighted likelihood under that state.
pub fn mixture_responsibilities(emit: &EmissionModel, feats: &FeatureSeries, stats: &PosteriorStats) -> Responsibilities {
    let tau = emit
        .channels
        .iter()
        .zip(&feats.frames)
        .zip(&stats.gamma)
        .map(|((ch, frames), gamma)| {
            frames
                .iter()
                .zip(gamma)
                .map(|(y, g)| {
                    let dens = ch.component_log_densities(y);
                    let mut out = vec![[0.0; N_STATES]; dens.len()];
                    for k in 0..N_STATES {
                        let w = ch.weights(k as u8);
                        let logs: Vec<f64> = dens
                            .iter()
                            .zip(w)
                            .map(|(d, &p)| if p > 0.0 { d + p.ln() } else { f64::NEG_INFINITY })
                            .collect();
                        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        if m == f64::NEG_INFINITY {
                            // every component has zero weight; fall back to uniform
                            let u = g[k] / dens.len() as f64;
                            out.iter_mut().for_each(|o| o[k] = u);
                            continue;
                        }
                        let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
                        for (o, l) in out.iter_mut().zip(&logs) {
                            o[k] = g[k] * (l - m).exp() / z;
                        }
                    }
                    out
                })
                .collect()
        })
        .collect();
    Responsibilities { tau }
}

const POSTERIOR_HEADER: [&str; 6] = ["channel", "frame", "start_s", "p_pre", "p_seizure", "p_post"];

/// Per-channel, per-frame state probabilities as read from or written to a
/// posterior file.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub channels: Vec<String>,
    pub frame_start_seconds: Vec<f64>,
    /// `probs[i][t]` = (pre, seizure, post).
    pub probs: Vec<Vec<[f64; N_STATES]>>,
}

impl Posteriors {
    pub fn new(channels: Vec<String>, frame_start_seconds: Vec<f64>, probs: Vec<Vec<[f64; N_STATES]>>) -> Self {
        Posteriors {
            channels,
            frame_start_seconds,
            probs,
        }
    }

    /// Seizure scores from framewise probabilities `p`: (1 - p, p, 0).
    pub fn from_seizure_probability(channels: Vec<String>, frame_start_seconds: Vec<f64>, p: &[Vec<f64>]) -> Self {
        let probs = p
            .iter()
            .map(|row| row.iter().map(|&p| [1.0 - p, p, 0.0]).collect())
            .collect();
        Posteriors::new(channels, frame_start_seconds, probs)
    }

    pub fn n_frames(&self) -> usize {
        self.frame_start_seconds.len()
    }

    pub fn seizure_probability(&self) -> Vec<Vec<f64>> {
        self.probs
            .iter()
            .map(|r| r.iter().map(|p| p[1]).collect())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = POSTERIOR_HEADER.join(",");
        out.push('\n');
        for (name, rows) in self.channels.iter().zip(&self.probs) {
            for (t, p) in rows.iter().enumerate() {
                out.push_str(&format!(
                    "{name},{t},{},{},{},{}\n",
                    self.frame_start_seconds[t], p[0], p[1], p[2]
                ));
            }
        }
        out
    }
}

/// Parses `channel,frame,start_s,p_pre,p_seizure,p_post`.
pub fn parse_posterior_csv(text: &str) -> Result<Posteriors> {
    let mut rows = records(text);
    let (hline, header) = rows
        .next()
        .ok_or_else(|| Error::parse(1, "empty posterior file"))??;
    expect_header(&header, hline, &POSTERIOR_HEADER)?;
    let mut channels: Vec<String> = Vec::new();
    let mut probs: Vec<Vec<[f64; N_STATES]>> = Vec::new();
    let mut starts: Vec<f64> = Vec::new();
    for row in rows {
        let (line, rec) = row?;
        if rec.len() != POSTERIOR_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, got {}", POSTERIOR_HEADER.len(), rec.len()),
            ));
        }
        if channels.last().map(String::as_str) != Some(&rec[0]) {
            if channels.iter().any(|c| c == &rec[0]) {
                return Err(Error::parse(line, format!("rows of channel `{}` are not contiguous", &rec[0])));
            }
            channels.push(rec[0].to_string());
            probs.push(Vec::new());
        }
        let ci = channels.len() - 1;
        let frame: usize = rec[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("frame: `{}` is not an index", &rec[1])))?;
        if frame != probs[ci].len() {
            return Err(Error::parse(line, format!("expected frame {}, got {frame}", probs[ci].len())));
        }
        let start = number(&rec[2], line, "start_s")?;
        if ci == 0 {
            starts.push(start);
        } else if starts.get(frame) != Some(&start) {
            return Err(Error::parse(line, "frame times differ between channels"));
        }
        let mut p = [0.0; N_STATES];
        for (k, slot) in p.iter_mut().enumerate() {
            *slot = number(&rec[3 + k], line, POSTERIOR_HEADER[3 + k])?;
            if !(0.0..=1.0).contains(slot) {
                return Err(Error::parse(line, format!("probability {slot} outside [0, 1]")));
            }
        }
        probs[ci].push(p);
    }
    if channels.is_empty() {
        return Err(Error::parse(hline, "posterior file has no rows"));
    }
    if let Some((c, _)) = channels.iter().zip(&probs).find(|(_, p)| p.len() != starts.len()) {
        return Err(Error::InvalidInput(format!("channel `{c}` has a different frame count")));
    }
    Ok(Posteriors::new(channels, starts, probs))
}

/// `sweep,channel,free_energy` rows.
pub fn fe_trace_csv(trace: &[FeTraceEntry], channels: &[String]) -> String {
    let mut out = String::from("sweep,channel,free_energy\n");
    for e in trace {
        out.push_str(&format!("{},{},{}\n", e.sweep, channels[e.channel], e.free_energy));
    }
    out
}
