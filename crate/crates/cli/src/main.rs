use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use chmm::baselines::{train_gmm_classifier, train_logreg, Baseline, BaselineConfig};
use chmm::eval::{fold_metrics, roc_curve, roc_csv, AucMode, FrameLabels, ScoredRecording};
use chmm::inference::{fe_trace_csv, parse_posterior_csv, run_estep, EStepConfig, Posteriors};
use chmm::learning::{run_em, EmConfig, TrainingRecording};
use chmm::model::{parse_model_file, sample_recording, ChmmModel, StateSequences, STATE_SEIZURE};
use chmm::montage::{build_standard_montage, load_montage, MontageGraph};
use chmm::signal::{
    extract_features, parse_features_csv, parse_labels_csv, parse_recording_csv, FeatureSeries, LabelInterval,
    SeizureLabels,
};

mod plot;

#[derive(Parser)]
#[command(name = "chmm", version, about = "Coupled HMM seizure detection on multichannel EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample states and features from a model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Index of the last frame; frames 0..=T are written.
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_prefix: String,
    },
    /// Filter a raw recording and compute per-frame features.
    Featurize {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        montage: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a manifest of `<recording-or-features.csv> <labels.csv>` lines.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Chmm)]
        method: Method,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        montage: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior state probabilities for a feature file.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the free-energy trace of the E-step.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Weighted TPR/TNR and AUC of posterior files against labels.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        posteriors: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        labels: Vec<PathBuf>,
        /// Lines of `<fold> <posterior.csv>` assigning each posterior file to a fold.
        #[arg(long)]
        kfold_manifest: Option<PathBuf>,
        #[arg(long, default_value = "chmm")]
        model_name: String,
        /// Average per-recording AUCs instead of pooling frames.
        #[arg(long)]
        per_recording_auc: bool,
        /// Write pooled ROC points here.
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Channels-by-time heatmap of seizure posteriors with label overlays.
    ExportPlot {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Chmm,
    Gmm,
    Logreg,
}

/// 3 for numerical failures anywhere in the chain, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<chmm::Error>())
        .any(chmm::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            model,
            frames,
            seed,
            out_prefix,
        } => simulate(&model, frames, seed, &out_prefix),
        Command::Featurize { recording, montage, out } => featurize(&recording, montage.as_deref(), &out),
        Command::Train {
            manifest,
            method,
            config,
            montage,
            out,
        } => train(&manifest, method, config.as_deref(), montage.as_deref(), &out),
        Command::Detect {
            model,
            features,
            out,
            trace,
        } => detect(&model, &features, &out, trace.as_deref()),
        Command::Evaluate {
            posteriors,
            labels,
            kfold_manifest,
            model_name,
            per_recording_auc,
            roc,
            out,
        } => {
            let mode = if per_recording_auc {
                AucMode::PerRecording
            } else {
                AucMode::Pooled
            };
            evaluate(&posteriors, &labels, kfold_manifest.as_deref(), &model_name, mode, roc.as_deref(), &out)
        }
        Command::ExportPlot { posteriors, labels, out } => export_plot(&posteriors, labels.as_deref(), &out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write into {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn load_montage_arg(path: Option<&Path>) -> Result<MontageGraph> {
    match path {
        Some(p) => load_montage(&read(p)?).with_context(|| format!("in montage {}", p.display())),
        None => Ok(build_standard_montage()),
    }
}

fn load_chmm(path: &Path) -> Result<ChmmModel> {
    ChmmModel::from_model_file(&read(path)?).with_context(|| format!("in model {}", path.display()))
}

/// Per-channel intervals covering the frames spent in the seizure state.
fn labels_from_states(states: &StateSequences, feats: &FeatureSeries) -> SeizureLabels {
    let starts = &feats.frame_start_seconds;
    let mut intervals = Vec::new();
    for (name, seq) in feats.channels.iter().zip(&states.states) {
        let Some(on) = seq.iter().position(|&s| s == STATE_SEIZURE) else {
            continue;
        };
        let off = seq[on..].iter().position(|&s| s != STATE_SEIZURE).map(|k| on + k);
        let offset = match off {
            Some(t) => starts[t],
            None => starts[seq.len() - 1] + feats.frame_step_seconds,
        };
        intervals.push(LabelInterval {
            channel: Some(name.clone()),
            onset: starts[on],
            offset,
        });
    }
    SeizureLabels { intervals }
}

fn simulate(model: &Path, frames: usize, seed: u64, prefix: &str) -> Result<()> {
    let model = load_chmm(model)?;
    let (states, feats) = sample_recording(&model, frames, seed);
    write_atomic(Path::new(&format!("{prefix}_features.csv")), &feats.to_csv())?;
    write_atomic(
        Path::new(&format!("{prefix}_states.csv")),
        &states.to_csv(&feats.channels, &feats.frame_start_seconds),
    )?;
    write_atomic(
        Path::new(&format!("{prefix}_labels.csv")),
        &labels_from_states(&states, &feats).to_csv(),
    )?;
    Ok(())
}

fn featurize(recording: &Path, montage: Option<&Path>, out: &Path) -> Result<()> {
    let montage = load_montage_arg(montage)?;
    let rec = parse_recording_csv(&read(recording)?).with_context(|| format!("in recording {}", recording.display()))?;
    let feats = extract_features(&rec, &montage)?;
    write_atomic(out, &feats.to_csv())
}

/// Features of a manifest entry, computed from raw samples when needed.
fn load_features(path: &Path, montage: &MontageGraph) -> Result<(FeatureSeries, f64)> {
    let text = read(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let ctx = || format!("in {}", path.display());
    match first {
        Some(h) if h.trim_start().starts_with("channel,frame,start_s") => {
            let feats = parse_features_csv(&text).with_context(ctx)?;
            let duration = feats.frame_start_seconds.last().copied().unwrap_or(0.0) + feats.frame_length_seconds;
            Ok((feats.aligned_to(montage).with_context(ctx)?, duration))
        }
        Some(h) if h.trim_start().starts_with("time_s") => {
            let rec = parse_recording_csv(&text).with_context(ctx)?;
            let duration = rec.duration_seconds();
            Ok((extract_features(&rec, montage).with_context(ctx)?, duration))
        }
        _ => bail!("{}: neither a feature file nor a recording", path.display()),
    }
}

fn read_manifest(path: &Path, montage: &MontageGraph) -> Result<Vec<TrainingRecording>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in read(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [data, labels] = parts[..] else {
            bail!("{}:{}: expected `<recording.csv> <labels.csv>`", path.display(), n + 1);
        };
        let (features, duration) = load_features(&base.join(data), montage)?;
        let label_path = base.join(labels);
        let intervals = parse_labels_csv(&read(&label_path)?).with_context(|| format!("in {}", label_path.display()))?;
        intervals
            .validate(duration)
            .with_context(|| format!("in {}", label_path.display()))?;
        let labels = FrameLabels::for_features(&intervals, &features);
        out.push(TrainingRecording { features, labels });
    }
    if out.is_empty() {
        bail!("{}: manifest lists no recordings", path.display());
    }
    Ok(out)
}

/// Splits a TOML config into EM settings and the baseline-only switches.
fn load_config(path: Option<&Path>) -> Result<(EmConfig, BaselineConfig)> {
    let Some(path) = path else {
        return Ok((EmConfig::default(), BaselineConfig::default()));
    };
    let mut table: toml::Table = toml::from_str(&read(path)?).with_context(|| format!("in config {}", path.display()))?;
    let mut flag = |key: &str| -> Result<bool> {
        match table.remove(key) {
            None => Ok(false),
            Some(toml::Value::Boolean(b)) => Ok(b),
            Some(_) => bail!("{}: `{key}` must be true or false", path.display()),
        }
    };
    let prevalence_prior = flag("prevalence_prior")?;
    let per_channel_logreg = flag("per_channel_logreg")?;
    let em: EmConfig = table.try_into().with_context(|| format!("in config {}", path.display()))?;
    em.validate()?;
    let baseline = BaselineConfig {
        mixtures: em.mixtures,
        variance_floor: em.variance_floor,
        seed: em.seed,
        prevalence_prior,
        per_channel_logreg,
        newton_max_iters: em.newton_max_iters,
        newton_grad_tol: em.newton_grad_tol,
    };
    Ok((em, baseline))
}

fn train(manifest: &Path, method: Method, config: Option<&Path>, montage: Option<&Path>, out: &Path) -> Result<()> {
    let (em, baseline) = load_config(config)?;
    let montage = load_montage_arg(montage)?;
    let data = read_manifest(manifest, &montage)?;
    let pairs: Vec<_> = data.iter().map(|d| (&d.features, &d.labels)).collect();
    match method {
        Method::Chmm => {
            let fit = run_em(&data, &montage, &em)?;
            write_atomic(out, &fit.model.to_model_file())?;
            let trace = out.with_file_name("em_trace.csv");
            write_atomic(&trace, &fit.trace_csv())?;
        }
        Method::Gmm => write_atomic(out, &Baseline::Gmm(train_gmm_classifier(&pairs, &baseline)?).to_model_file())?,
        Method::Logreg => write_atomic(out, &Baseline::LogReg(train_logreg(&pairs, &baseline)?).to_model_file())?,
    }
    Ok(())
}

fn detect(model: &Path, features: &Path, out: &Path, trace: Option<&Path>) -> Result<()> {
    let doc = parse_model_file(&read(model)?).with_context(|| format!("in model {}", model.display()))?;
    let feats = parse_features_csv(&read(features)?).with_context(|| format!("in features {}", features.display()))?;
    let post = if doc.kind == "chmm" {
        let model = ChmmModel::from_document(&doc).with_context(|| format!("in model {}", model.display()))?;
        let feats = feats.aligned_to(&model.montage).context("features do not cover the model montage")?;
        let res = run_estep(&model, &feats, &EStepConfig::default())?;
        if let Some(t) = trace {
            write_atomic(t, &fe_trace_csv(&res.trace, &feats.channels))?;
        }
        Posteriors::new(feats.channels.clone(), feats.frame_start_seconds.clone(), res.stats.gamma)
    } else {
        let clf = Baseline::from_document(&doc).with_context(|| format!("in model {}", model.display()))?;
        let p = clf.score(&feats).context("features do not cover the classifier channels")?;
        Posteriors::from_seizure_probability(clf.channels().to_vec(), feats.frame_start_seconds.clone(), &p)
    };
    write_atomic(out, &post.to_csv())
}

fn read_posteriors(path: &Path) -> Result<Posteriors> {
    parse_posterior_csv(&read(path)?).with_context(|| format!("in posteriors {}", path.display()))
}

fn read_labels(path: &Path) -> Result<SeizureLabels> {
    parse_labels_csv(&read(path)?).with_context(|| format!("in labels {}", path.display()))
}

/// Fold index of each posterior file, in argument order.
fn read_folds(path: &Path, posteriors: &[PathBuf]) -> Result<Vec<usize>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut folds = vec![None; posteriors.len()];
    for (n, line) in read(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [fold, file] = parts[..] else {
            bail!("{}:{}: expected `<fold> <posterior.csv>`", path.display(), n + 1);
        };
        let fold: usize = fold
            .parse()
            .with_context(|| format!("{}:{}: fold must be a nonnegative integer", path.display(), n + 1))?;
        let file = base.join(file);
        let idx = posteriors
            .iter()
            .position(|p| same_file(p, &file))
            .with_context(|| format!("{}:{}: {} is not among --posteriors", path.display(), n + 1, file.display()))?;
        folds[idx] = Some(fold);
    }
    folds
        .into_iter()
        .zip(posteriors)
        .map(|(f, p)| f.with_context(|| format!("{} has no fold in {}", p.display(), path.display())))
        .collect()
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn evaluate(
    posteriors: &[PathBuf],
    labels: &[PathBuf],
    kfold: Option<&Path>,
    model_name: &str,
    mode: AucMode,
    roc: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if posteriors.len() != labels.len() {
        bail!("{} posterior files but {} label files", posteriors.len(), labels.len());
    }
    let mut recs = Vec::new();
    for (p, l) in posteriors.iter().zip(labels) {
        let post = read_posteriors(p)?;
        let intervals = read_labels(l)?;
        for iv in &intervals.intervals {
            if let Some(c) = &iv.channel {
                if !post.channels.contains(c) {
                    bail!("{}: channel `{c}` is not in {}", l.display(), p.display());
                }
            }
        }
        recs.push(ScoredRecording {
            scores: post.seizure_probability(),
            labels: FrameLabels::from_intervals(&intervals, &post.channels, &post.frame_start_seconds),
        });
    }
    let folds = match kfold {
        Some(k) => read_folds(k, posteriors)?,
        None => vec![0; recs.len()],
    };
    let report = fold_metrics(model_name, &recs, &folds, mode)?;
    write_atomic(out, &report.to_csv())?;
    if let Some(roc) = roc {
        let scores: Vec<f64> = recs.iter().flat_map(|r| r.scores.iter().flatten().copied()).collect();
        let truth: Vec<bool> = recs.iter().flat_map(|r| r.labels.labels.iter().flatten().copied()).collect();
        write_atomic(roc, &roc_csv(&roc_curve(&scores, &truth)?))?;
    }
    Ok(())
}

fn export_plot(posteriors: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    let post = read_posteriors(posteriors)?;
    let labels = match labels {
        Some(l) => read_labels(l)?,
        None => SeizureLabels::default(),
    };
    let svg = plot::heatmap_svg(&post, &labels)?;
    write_atomic(out, &svg)?;
    write_atomic(&out.with_extension("csv"), &plot::raster_csv(&post))
}
