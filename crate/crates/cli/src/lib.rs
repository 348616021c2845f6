//! Subcommands of the `bsannot` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use bsannot_core::audio::{load_wav, write_wav, PcmFormat};
use bsannot_core::classify::{train_spectral, BackendKind, ClassifiedEvent, MelConfig, TrainConfig, TrainingItem};
use bsannot_core::detect::detect_recording;
use bsannot_core::evalstats::{self, export, AgreementConfig};
use bsannot_core::patterns::{parse_label_track, write_label_track, LabelTrack, PatternLabel, TrackSource};
use bsannot_core::pipeline::{classify_and_refine, PipelineConfig, StageTimings};
use bsannot_core::synth::{corpus_script, CorpusSpec, SynthScript};
use bsannot_core::{ChannelId, Cohort, Error};

pub const ERROR_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "bsannot", version, about = "Bowel-sound auto-annotation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect, classify and refine every channel of a recording.
    Annotate(AnnotateArgs),
    /// Compare a candidate label file against a reference.
    Eval(EvalArgs),
    /// Report how an expert adjusted an automatic label file.
    Adjust(AdjustArgs),
    /// Render a synthesis script or a random corpus to WAV plus labels.
    Synth(SynthArgs),
    /// Train a spectral model on labelled recordings.
    Train(TrainArgs),
    /// Run the review service.
    Serve(ServeArgs),
    /// Reference adapter answering every request with uniform scores.
    AdapterUniform,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration, `.toml` or `.json`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cohort: Option<Cohort>,
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// External adapter, `tcp://host:port` or a command line.
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    /// Write the channels that succeeded even when others fail.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long = "cand")]
    pub candidate: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = evalstats::DEFAULT_IOU_MIN)]
    pub iou: f64,
    /// Width of the duration histogram bins.
    #[arg(long, default_value_t = 50.0)]
    pub hist_bin_ms: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AdjustArgs {
    #[arg(long)]
    pub auto: PathBuf,
    #[arg(long)]
    pub expert: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub review_time_s: Option<f64>,
    /// Time a fully manual annotation took; enables the time-saving figure.
    #[arg(long)]
    pub manual_baseline_s: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Event script (JSON).
    #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
    pub script: Option<PathBuf>,
    /// Random corpus settings (JSON) instead of a script.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "int16")]
    pub format: String,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory of `<name>.wav` files with `<name>.truth.labels.txt` or
    /// `<name>.labels.txt` beside them. Each file is one subject.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "combined")]
    pub cohort: String,
    /// Directory the model file is written to.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// Failure of a subcommand: exit code 1 for processing errors, 2 for
/// usage and I/O errors.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
    pub detail: Option<Value>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage".into(),
            message: message.into(),
            detail: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "v": ERROR_VERSION, "error": { "kind": self.kind, "message": self.message, "exit_code": self.code } });
        if let Some(d) = &self.detail {
            v["error"]["detail"] = d.clone();
        }
        v
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::UnsupportedEncoding { .. }
        | Error::ZeroLength { .. }
        | Error::CorruptHeader { .. }
        | Error::Config(_)
        | Error::Label(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            kind: e.kind().to_string(),
            message: e.to_string(),
            detail: None,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError {
        code: 2,
        kind: "io".into(),
        message: format!("{}: {e}", path.display()),
        detail: None,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_at(path))
}

fn read_track(path: &Path, source: TrackSource) -> Result<LabelTrack, CliError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    parse_label_track(&text, source).map_err(|e| CliError {
        code: 2,
        kind: "label".into(),
        message: format!("{}: {e}", path.display()),
        detail: None,
    })
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_string()
}

pub fn resolve_config(args: &AnnotateArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(c) = args.cohort {
        cfg.cohort = c;
    }
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(a) = &args.adapter {
        cfg.adapter = Some(a.clone());
    }
    if let Some(d) = &args.model_dir {
        cfg.model_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct ChannelFailure {
    pub index: Option<usize>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct ChannelEntry {
    pub channel: ChannelId,
    pub labels_file: Option<String>,
    pub events_file: Option<String>,
    pub detected_events: usize,
    pub segments: usize,
    pub thr_rms: Option<f64>,
    pub failures: Vec<ChannelFailure>,
}

#[derive(Debug, Serialize)]
pub struct ChannelTiming {
    pub channel: ChannelId,
    #[serde(flatten)]
    pub stages: StageTimings,
}

/// Everything needed to reproduce a run. Only `timings` varies between
/// identical runs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub v: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub input: String,
    pub input_sha256: String,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub backend: String,
    pub model_id: String,
    pub channels: Vec<ChannelEntry>,
    pub timings: Timings,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub total_s: f64,
    pub channels: Vec<ChannelTiming>,
}

#[derive(Debug)]
pub struct AnnotateOutcome {
    pub manifest_path: PathBuf,
    pub label_files: Vec<PathBuf>,
    pub failed_channels: usize,
}

#[derive(Serialize)]
struct EventsFile<'a> {
    v: u32,
    channel: ChannelId,
    events: &'a [ClassifiedEvent],
}

pub fn cmd_annotate(args: &AnnotateArgs) -> Result<AnnotateOutcome, CliError> {
    let t0 = Instant::now();
    let cfg = resolve_config(args)?;
    let bytes = fs::read(&args.input).map_err(io_at(&args.input))?;
    let rec = load_wav(&args.input)?;
    let backend = cfg.build_backend()?;
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    let name = stem(&args.input);

    let t_detect = Instant::now();
    let detections = detect_recording(&rec, &cfg.detector);
    let detect_s = t_detect.elapsed().as_secs_f64();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        detections
            .par_iter()
            .map(|(id, det)| {
                let clip = rec.channel(*id).expect("channel present");
                let res = det.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                    classify_and_refine(clip, d, &cfg, backend.as_ref())
                        .map(|a| (d.events.len(), d.thresholds.thr_rms, a))
                        .map_err(|e| e.to_string())
                });
                (*id, res)
            })
            .collect()
    });

    let mut channels = Vec::new();
    let mut timings = Vec::new();
    let mut failed = 0;
    let mut outputs = Vec::new();
    for (id, res) in results {
        let mut entry = ChannelEntry {
            channel: id,
            labels_file: None,
            events_file: None,
            detected_events: 0,
            segments: 0,
            thr_rms: None,
            failures: Vec::new(),
        };
        match res {
            Ok((n_detected, thr_rms, ann)) => {
                entry.detected_events = n_detected;
                entry.thr_rms = Some(thr_rms);
                entry.segments = ann.track.len();
                entry.failures = ann
                    .failures
                    .iter()
                    .map(|(i, e)| ChannelFailure {
                        index: Some(*i),
                        kind: e.kind().into(),
                        message: e.to_string(),
                    })
                    .collect();
                if !entry.failures.is_empty() {
                    failed += 1;
                }
                let mut stages = ann.timings;
                stages.detect_s = detect_s;
                timings.push(ChannelTiming { channel: id, stages });
                outputs.push((id, ann.track, ann.events));
            }
            Err(message) => {
                failed += 1;
                entry.failures.push(ChannelFailure {
                    index: None,
                    kind: "channel".into(),
                    message,
                });
            }
        }
        channels.push(entry);
    }

    if failed > 0 && !args.keep_going {
        let detail = serde_json::to_value(&channels).unwrap_or(Value::Null);
        return Err(CliError {
            code: 1,
            kind: "channel_failure".into(),
            message: format!("{failed} channel(s) failed; rerun with --keep-going to write the others"),
            detail: Some(detail),
        });
    }

    let mut label_files = Vec::new();
    for (id, track, events) in &outputs {
        let labels_name = format!("{name}.{id}.labels.txt");
        let events_name = format!("{name}.{id}.events.json");
        let path = args.out.join(&labels_name);
        write_file(&path, write_label_track(track))?;
        write_file(
            &args.out.join(&events_name),
            json_pretty(&EventsFile {
                v: 1,
                channel: *id,
                events,
            }),
        )?;
        label_files.push(path);
        let entry = channels.iter_mut().find(|c| c.channel == *id).expect("entry");
        entry.labels_file = Some(labels_name);
        entry.events_file = Some(events_name);
    }

    let manifest = Manifest {
        v: 1,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        input: args
            .input
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        input_sha256: hex(&Sha256::digest(&bytes)),
        sample_rate: rec.sample_rate(),
        duration_s: rec.duration_s(),
        config_hash: cfg.hash(),
        backend: backend.name().to_string(),
        model_id: cfg.model_id().to_string(),
        config: cfg,
        channels,
        timings: Timings {
            total_s: t0.elapsed().as_secs_f64(),
            channels: timings,
        },
    };
    let manifest_path = args.out.join(format!("{name}.manifest.json"));
    write_file(&manifest_path, json_pretty(&manifest))?;
    Ok(AnnotateOutcome {
        manifest_path,
        label_files,
        failed_channels: failed,
    })
}

/// Agreement, distributions of both tracks and duration histograms.
pub fn cmd_eval(args: &EvalArgs) -> Result<Value, CliError> {
    if !(args.hist_bin_ms > 0.0) {
        return Err(CliError::usage("--hist-bin-ms must be positive"));
    }
    let reference = read_track(&args.reference, TrackSource::Manual)?;
    let candidate = read_track(&args.candidate, TrackSource::Auto)?;
    let agreement = evalstats::agreement_with(&reference, &candidate, &AgreementConfig { iou_min: args.iou })?;
    let dist_ref = evalstats::distribution(&reference);
    let dist_cand = evalstats::distribution(&candidate);
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;

    write_file(&args.out.join("agreement.json"), json_pretty(&agreement))?;
    let mut buf = Vec::new();
    export::agreement_csv(&agreement, &mut buf)?;
    write_file(&args.out.join("confusion.csv"), buf)?;
    let distributions = json!({ "v": evalstats::REPORT_VERSION, "reference": dist_ref, "candidate": dist_cand });
    write_file(&args.out.join("distribution.json"), json_pretty(&distributions))?;
    let mut buf = Vec::new();
    export::distribution_csv(&[&dist_ref, &dist_cand], &mut buf)?;
    write_file(&args.out.join("distribution.csv"), buf)?;
    for (tag, track) in [("reference", &reference), ("candidate", &candidate)] {
        let mut bins = Vec::new();
        for label in PatternLabel::ALL {
            bins.extend(evalstats::duration_histogram(
                std::slice::from_ref(track),
                label,
                args.hist_bin_ms / 1000.0,
            ));
        }
        let mut buf = Vec::new();
        export::histogram_csv(&bins, &mut buf)?;
        write_file(&args.out.join(format!("histogram.{tag}.csv")), buf)?;
    }
    Ok(json!({
        "v": evalstats::REPORT_VERSION,
        "matched_events": agreement.matched_events,
        "missed": agreement.missed,
        "spurious": agreement.spurious,
        "boundary_mae_ms": agreement.boundary_mae_ms,
        "prevalence_order_preserved": agreement.prevalence_order_preserved,
    }))
}

pub fn cmd_adjust(args: &AdjustArgs) -> Result<Value, CliError> {
    let auto = read_track(&args.auto, TrackSource::Auto)?;
    let expert = read_track(&args.expert, TrackSource::ExpertAdjusted)?;
    let mut report = evalstats::adjustment_report(&auto, &expert, args.review_time_s)?;
    if let Some(b) = args.manual_baseline_s {
        report = report.with_manual_baseline(b);
    }
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    write_file(&args.out.join("adjustment.json"), json_pretty(&report))?;
    let mut buf = Vec::new();
    export::adjustment_csv(&report, &mut buf)?;
    write_file(&args.out.join("adjustment.csv"), buf)?;
    Ok(serde_json::to_value(&report).expect("serialisable"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| CliError {
        code: 2,
        kind: "json".into(),
        message: format!("{}: {e}", path.display()),
        detail: None,
    })
}

/// Writes `<name>.wav`, `<name>.truth.labels.txt` and `<name>.script.json`
/// (the fully resolved script).
pub fn cmd_synth(args: &SynthArgs) -> Result<Value, CliError> {
    let (script, name): (SynthScript, String) = match (&args.script, &args.corpus) {
        (Some(p), _) => (read_json(p)?, stem(p)),
        (None, Some(p)) => (corpus_script(&read_json::<CorpusSpec>(p)?)?, stem(p)),
        (None, None) => return Err(CliError::usage("one of --script or --corpus is required")),
    };
    let format = match args.format.as_str() {
        "int16" => PcmFormat::Int16,
        "float32" => PcmFormat::Float32,
        other => return Err(CliError::usage(format!("unknown format {other:?}"))),
    };
    let rendered = script.render()?;
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    let wav = args.out.join(format!("{name}.wav"));
    write_wav(&wav, &rendered.recording, format)?;
    write_file(
        &args.out.join(format!("{name}.truth.labels.txt")),
        write_label_track(&rendered.truth),
    )?;
    write_file(&args.out.join(format!("{name}.script.json")), json_pretty(&script))?;
    Ok(json!({
        "v": 1,
        "wav": wav.display().to_string(),
        "events": rendered.truth.len(),
        "duration_s": script.duration_s,
    }))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Value, CliError> {
    let cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut entries: Vec<PathBuf> = fs::read_dir(&args.data)
        .map_err(io_at(&args.data))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .collect();
    entries.sort();
    let mut items = Vec::new();
    for wav in entries {
        let name = stem(&wav);
        let labels = [format!("{name}.truth.labels.txt"), format!("{name}.labels.txt")]
            .into_iter()
            .map(|f| args.data.join(f))
            .find(|p| p.exists());
        let Some(labels) = labels else {
            log::warn!("{}: no label file, skipped", wav.display());
            continue;
        };
        let track = read_track(&labels, TrackSource::Manual)?;
        let rec = load_wav(&wav)?;
        let clip = rec.channels().values().next().expect("at least one channel").clone();
        items.push(TrainingItem {
            clip,
            track,
            subject_id: name,
        });
    }
    let train_cfg = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    let model = train_spectral(&items, &args.cohort, &cfg.mel, &train_cfg)?;
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    let path = args.out.join(format!("{}.json", model.model_id));
    model.save(&path)?;
    Ok(json!({
        "v": 1,
        "model_id": model.model_id,
        "path": path.display().to_string(),
        "subjects": items.len(),
        "train_accuracy": model.train_accuracy,
        "validation_accuracy": model.validation_accuracy,
        "test_accuracy": model.test_accuracy,
    }))
}

pub async fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let store = bsannot_review::Store::open(&args.data).map_err(|e| CliError {
        code: 2,
        kind: e.kind().into(),
        message: e.to_string(),
        detail: None,
    })?;
    let addr = format!("{}:{}", args.host, args.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError {
        code: 2,
        kind: "bind".into(),
        message: format!("{addr}: {e}"),
        detail: None,
    })?;
    log::info!("listening on {addr}");
    let state = bsannot_review::AppState {
        store: std::sync::Arc::new(store),
        mel: MelConfig::default(),
    };
    bsannot_review::serve(listener, state, shutdown_signal())
        .await
        .map_err(io_at(&args.data))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
