//! Versioned, sectioned text format for trained models.
//!
//! ```text
//! chmm-model v1
//! kind: chmm
//! [montage]
//! channels: A,B
//! edge: A B neighbor
//! [transitions]
//! rho0 = -7
//! ...
//! [channel A]
//! mean.0 = 1 2 3 4 5
//! var.0 = 1 1 1 1 1
//! weights_baseline = 1
//! weights_seizure = 1
//! ```
//!
//! Numbers are written with the shortest representation that parses back to
//! the identical `f64`.

use super::{ChannelEmission, ChmmModel, EmissionModel, TransitionParams};
use crate::error::{Error, Result};
use crate::montage::{load_montage, MontageGraph};
use crate::signal::{FeatureVector, FEATURE_DIM};

pub const MODEL_HEADER: &str = "chmm-model v1";

/// `[name]` block with its raw lines.
#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub lines: Vec<(usize, String)>,
}

impl Section {
    /// `key = value` entries of this section.
    pub fn entries(&self) -> Result<Vec<(usize, &str, &str)>> {
        self.lines
            .iter()
            .map(|(n, l)| {
                let (k, v) = l
                    .split_once('=')
                    .ok_or_else(|| Error::parse(*n, format!("expected `key = value`, got `{l}`")))?;
                Ok((*n, k.trim(), v.trim()))
            })
            .collect()
    }

    pub fn get(&self, key: &str) -> Result<(usize, &str)> {
        self.entries()?
            .into_iter()
            .find(|(_, k, _)| *k == key)
            .map(|(n, _, v)| (n, v))
            .ok_or_else(|| Error::parse(self.line, format!("section [{}] lacks `{key}`", self.name)))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let (n, v) = self.get(key)?;
        parse_f64(v, n)
    }

    pub fn get_vec(&self, key: &str) -> Result<Vec<f64>> {
        let (n, v) = self.get(key)?;
        parse_vec(v, n)
    }

    pub fn text(&self) -> String {
        self.lines
            .iter()
            .map(|(_, l)| l.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parsed header, kind and sections of a model file.
#[derive(Debug, Clone)]
pub struct ModelDocument {
    pub kind: String,
    pub sections: Vec<Section>,
}

impl ModelDocument {
    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::parse(1, format!("missing section [{name}]")))
    }

    pub fn montage(&self) -> Result<MontageGraph> {
        let sec = self.section("montage")?;
        load_montage(&sec.text()).map_err(|e| match e {
            Error::Parse { line, message } => {
                // translate to file line numbers
                let file_line = sec.lines.get(line.saturating_sub(1)).map_or(sec.line, |l| l.0);
                Error::parse(file_line, message)
            }
            other => other,
        })
    }
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(line, format!("`{s}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, format!("non-finite value `{s}`")))
    }
}

pub(crate) fn parse_vec(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| parse_f64(t, line)).collect()
}

pub(crate) fn parse_feature_vector(s: &str, line: usize) -> Result<FeatureVector> {
    let v = parse_vec(s, line)?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::parse(line, format!("expected {FEATURE_DIM} values, got {}", v.len())))
}

pub(crate) fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits a model file into header, kind and sections.
pub fn parse_model_file(text: &str) -> Result<ModelDocument> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MODEL_HEADER)) => {}
        _ => return Err(Error::parse(1, format!("expected header `{MODEL_HEADER}`"))),
    }
    let mut kind = None;
    let mut sections: Vec<Section> = Vec::new();
    for (n, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push(Section {
                name: name.trim().to_string(),
                line: n,
                lines: Vec::new(),
            });
        } else if let Some(section) = sections.last_mut() {
            section.lines.push((n, line.to_string()));
        } else if let Some(k) = line.strip_prefix("kind:") {
            kind = Some(k.trim().to_string());
        } else {
            return Err(Error::parse(n, format!("unexpected line `{line}` before first section")));
        }
    }
    let kind = kind.ok_or_else(|| Error::parse(2, "missing `kind:` line"))?;
    Ok(ModelDocument { kind, sections })
}

pub(crate) fn write_mixture(out: &mut String, means: &[FeatureVector], vars: &[FeatureVector]) {
    for (j, (m, v)) in means.iter().zip(vars).enumerate() {
        out.push_str(&format!("mean.{j} = {}\n", join(m)));
        out.push_str(&format!("var.{j} = {}\n", join(v)));
    }
}

pub(crate) fn read_mixture(sec: &Section, n: usize) -> Result<(Vec<FeatureVector>, Vec<FeatureVector>)> {
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for j in 0..n {
        let (ln, v) = sec.get(&format!("mean.{j}"))?;
        means.push(parse_feature_vector(v, ln)?);
        let (ln, v) = sec.get(&format!("var.{j}"))?;
        vars.push(parse_feature_vector(v, ln)?);
    }
    Ok((means, vars))
}

impl ChmmModel {
    pub fn to_model_file(&self) -> String {
        let mut out = format!("{MODEL_HEADER}\nkind: chmm\n[montage]\n");
        out.push_str(&self.montage.serialize());
        let t = &self.trans;
        out.push_str(&format!(
            "[transitions]\nrho0 = {}\nrho1 = {}\nphi0 = {}\nphi1 = {}\n",
            t.rho0, t.rho1, t.phi0, t.phi1
        ));
        out.push_str(&format!("[emissions]\nmixtures = {}\n", self.emit.n_mixtures()));
        for (name, ch) in self.montage.channels().iter().zip(&self.emit.channels) {
            out.push_str(&format!("[channel {name}]\n"));
            write_mixture(&mut out, &ch.means, &ch.variances);
            out.push_str(&format!("weights_baseline = {}\n", join(&ch.weights_baseline)));
            out.push_str(&format!("weights_seizure = {}\n", join(&ch.weights_seizure)));
        }
        out
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.kind != "chmm" {
            return Err(Error::InvalidInput(format!("expected a chmm model, got kind `{}`", doc.kind)));
        }
        let montage = doc.montage()?;
        let tr = doc.section("transitions")?;
        let trans = TransitionParams::new(
            tr.get_f64("rho0")?,
            tr.get_f64("rho1")?,
            tr.get_f64("phi0")?,
            tr.get_f64("phi1")?,
        )?;
        let em = doc.section("emissions")?;
        let (ln, j) = em.get("mixtures")?;
        let j: usize = j
            .parse()
            .ok()
            .filter(|&j| j >= 1)
            .ok_or_else(|| Error::parse(ln, "mixtures must be a positive integer"))?;
        let channels = montage
            .channels()
            .iter()
            .map(|name| {
                let sec = doc.section(&format!("channel {name}"))?;
                let (means, variances) = read_mixture(sec, j)?;
                Ok(ChannelEmission {
                    means,
                    variances,
                    weights_baseline: sec.get_vec("weights_baseline")?,
                    weights_seizure: sec.get_vec("weights_seizure")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ChmmModel::new(montage, trans, EmissionModel { channels })
    }

    pub fn from_model_file(text: &str) -> Result<Self> {
        Self::from_document(&parse_model_file(text)?)
    }
}
