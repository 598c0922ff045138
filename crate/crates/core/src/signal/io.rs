//! CSV formats for recordings, seizure labels and feature series.

use csv::{ReaderBuilder, StringRecord, Trim};

use super::{FeatureSeries, FeatureVector, LabelInterval, Recording, SeizureLabels};
use super::{FEATURE_DIM, FEATURE_NAMES, FRAME_LENGTH_SECONDS, FRAME_STEP_SECONDS};
use crate::error::{Error, Result};

pub(crate) fn records(text: &str) -> impl Iterator<Item = Result<(usize, StringRecord)>> + '_ {
    ReaderBuilder::new()
        .has_headers(false)
        .trim(Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .into_records()
        .map(|r| {
            let rec = r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::parse(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            Ok((line, rec))
        })
}

pub(crate) fn number(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("{what}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what}: non-finite value `{field}`")));
    }
    Ok(v)
}

pub(crate) fn expect_header(rec: &StringRecord, line: usize, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = rec.iter().collect();
    if got != expected {
        return Err(Error::parse(
            line,
            format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Parses `time_s,<ch1>,<ch2>,...` with one row per sample. The sample
/// rate is the reciprocal of the first time step, rounded to 1 µHz.
pub fn parse_recording_csv(text: &str) -> Result<Recording> {
    let mut rows = records(text);
    let (hline, header) = rows
        .next()
        .ok_or_else(|| Error::parse(1, "empty recording file"))??;
    if header.get(0) != Some("time_s") || header.len() < 2 {
        return Err(Error::parse(hline, "header must be `time_s,<channel>,...`"));
    }
    let channels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut samples = vec![Vec::new(); channels.len()];
    for row in rows {
        let (line, rec) = row?;
        if rec.len() != channels.len() + 1 {
            return Err(Error::parse(
                line,
                format!("expected {} fields, got {}", channels.len() + 1, rec.len()),
            ));
        }
        times.push(number(&rec[0], line, "time_s")?);
        for (c, col) in samples.iter_mut().enumerate() {
            col.push(number(&rec[c + 1], line, &channels[c])?);
        }
    }
    if times.len() < 2 {
        return Err(Error::parse(hline, "need at least two samples to infer the sample rate"));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::parse(hline + 2, "time stamps must increase"));
    }
    let rate = (1e6 / dt).round() / 1e6;
    Recording::new(rate, channels, samples)
}

impl Recording {
    pub fn to_csv(&self) -> String {
        let mut out = format!("time_s,{}\n", self.channels.join(","));
        for n in 0..self.n_samples() {
            out.push_str(&format!("{}", n as f64 / self.sample_rate));
            for col in &self.samples {
                out.push_str(&format!(",{}", col[n]));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses `channel,onset_s,offset_s`; channel `*` labels all channels.
pub fn parse_labels_csv(text: &str) -> Result<SeizureLabels> {
    let mut rows = records(text);
    let (hline, header) = rows
        .next()
        .ok_or_else(|| Error::parse(1, "empty label file"))??;
    expect_header(&header, hline, &["channel", "onset_s", "offset_s"])?;
    let mut intervals = Vec::new();
    for row in rows {
        let (line, rec) = row?;
        if rec.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 fields, got {}", rec.len())));
        }
        let onset = number(&rec[1], line, "onset_s")?;
        let offset = number(&rec[2], line, "offset_s")?;
        if !(0.0 <= onset && onset < offset) {
            return Err(Error::parse(line, format!("invalid interval [{onset}, {offset})")));
        }
        intervals.push(LabelInterval {
            channel: (&rec[0] != "*").then(|| rec[0].to_string()),
            onset,
            offset,
        });
    }
    Ok(SeizureLabels { intervals })
}

const FEATURE_HEADER: [&str; 3 + FEATURE_DIM] = [
    "channel",
    "frame",
    "start_s",
    FEATURE_NAMES[0],
    FEATURE_NAMES[1],
    FEATURE_NAMES[2],
    FEATURE_NAMES[3],
    FEATURE_NAMES[4],
];

/// Parses `channel,frame,start_s,theta,delta,alpha,beta,loglinelength`.
///
/// Channels appear in order of first occurrence; each must list frames
/// `0..=T` in order with the same start times as every other channel.
pub fn parse_features_csv(text: &str) -> Result<FeatureSeries> {
    let mut rows = records(text);
    let (hline, header) = rows
        .next()
        .ok_or_else(|| Error::parse(1, "empty feature file"))??;
    expect_header(&header, hline, &FEATURE_HEADER)?;
    let mut channels: Vec<String> = Vec::new();
    let mut frames: Vec<Vec<FeatureVector>> = Vec::new();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for row in rows {
        let (line, rec) = row?;
        if rec.len() != FEATURE_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, got {}", FEATURE_HEADER.len(), rec.len()),
            ));
        }
        let ci = match channels.iter().position(|c| c == &rec[0]) {
            Some(ci) if ci + 1 == channels.len() => ci,
            Some(_) => {
                return Err(Error::parse(line, format!("rows of channel `{}` are not contiguous", &rec[0])));
            }
            None => {
                channels.push(rec[0].to_string());
                frames.push(Vec::new());
                starts.push(Vec::new());
                channels.len() - 1
            }
        };
        let frame: usize = rec[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("frame: `{}` is not an index", &rec[1])))?;
        if frame != frames[ci].len() {
            return Err(Error::parse(
                line,
                format!("expected frame {} of channel `{}`, got {frame}", frames[ci].len(), &rec[0]),
            ));
        }
        starts[ci].push(number(&rec[2], line, "start_s")?);
        let mut v = [0.0; FEATURE_DIM];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = number(&rec[3 + k], line, FEATURE_NAMES[k])?;
        }
        frames[ci].push(v);
    }
    if channels.is_empty() {
        return Err(Error::parse(hline, "feature file has no rows"));
    }
    for (c, s) in channels.iter().zip(&starts).skip(1) {
        if s != &starts[0] {
            return Err(Error::InvalidInput(format!(
                "channel `{c}` frame times differ from channel `{}`",
                channels[0]
            )));
        }
    }
    let start = starts.swap_remove(0);
    let step = if start.len() > 1 {
        start[1] - start[0]
    } else {
        FRAME_STEP_SECONDS
    };
    let series = FeatureSeries {
        channels,
        frames,
        frame_start_seconds: start,
        frame_step_seconds: step,
        frame_length_seconds: FRAME_LENGTH_SECONDS,
    };
    series.validate()?;
    Ok(series)
}

impl FeatureSeries {
    pub fn to_csv(&self) -> String {
        let mut out = FEATURE_HEADER.join(",");
        out.push('\n');
        for (name, rows) in self.channels.iter().zip(&self.frames) {
            for (t, v) in rows.iter().enumerate() {
                out.push_str(&format!("{name},{t},{}", self.frame_start_seconds[t]));
                for x in v {
                    out.push_str(&format!(",{x}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording_rate_from_timestamps() {
        let rec = parse_recording_csv("time_s,A,B\n0,1,2\n0.005,3,4\n0.01,5,6\n").unwrap();
        assert_eq!(rec.sample_rate, 200.0);
        assert_eq!(rec.channels, vec!["A", "B"]);
        assert_eq!(rec.samples[1], vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn recording_errors_carry_line_numbers() {
        let err = parse_recording_csv("time_s,A\n0,1\n0.005,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_recording_csv("time_s,A\n0,1\n0.005,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(parse_recording_csv("").is_err());
        assert!(parse_recording_csv("time_s,A\n0,1\n").is_err());
        assert!(parse_recording_csv("t,A\n0,1\n1,2\n").is_err());
    }

    #[test]
    fn recording_round_trip() {
        let rec = Recording::new(
            200.0,
            vec!["A".into(), "B".into()],
            vec![vec![0.25, -1.5, 3.0], vec![1e-3, 2.0, 7.125]],
        )
        .unwrap();
        assert_eq!(parse_recording_csv(&rec.to_csv()).unwrap(), rec);
    }

    #[test]
    fn labels_parse() {
        let labels = parse_labels_csv("channel,onset_s,offset_s\n*,10,20\nCz,12.5,30\n").unwrap();
        assert_eq!(labels.intervals.len(), 2);
        assert!(labels.is_seizure("Fp1", 10.0));
        assert!(!labels.is_seizure("Fp1", 20.0));
        assert!(labels.is_seizure("Cz", 25.0));
        assert!(parse_labels_csv("channel,onset_s,offset_s\nCz,5,4\n").is_err());
        assert_eq!(parse_labels_csv(&labels.to_csv()).unwrap(), labels);
    }

    #[test]
    fn features_round_trip_bit_exact() {
        let series = FeatureSeries::new(
            vec!["A".into(), "B".into()],
            vec![
                vec![[0.1, 0.2, 0.3, 0.4, 1.0 / 3.0], [1.0, 2.0, 3.0, 4.0, 5.0]],
                vec![[-0.1, 1e-300, 3.0, 4.0, 7.7], [9.0, 8.0, 7.0, 6.0, 5.5]],
            ],
            0.75,
            1.0,
        )
        .unwrap();
        let back = parse_features_csv(&series.to_csv()).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn features_reject_gaps() {
        let text = "channel,frame,start_s,theta,delta,alpha,beta,loglinelength\nA,0,0,1,1,1,1,1\nA,2,1.5,1,1,1,1,1\n";
        assert!(matches!(parse_features_csv(text), Err(Error::Parse { line: 3, .. })));
    }
}
